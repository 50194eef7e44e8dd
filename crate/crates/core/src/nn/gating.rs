use rand::Rng;

use super::{join, mixer_block, Initializer, Linear, MixerSubunitParams};
use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Scalar, TensorResult, Var};

/// Gating unit: an inner mixer block produces the gate, an outer per-token
/// affine map produces the gated values.
#[derive(Clone, Copy, Debug)]
pub struct GatingParams<'g, T: Scalar> {
    pub mixer: MixerSubunitParams<'g, T>,
    pub linear_proj: Linear<'g, T>,
    /// Squash the gate through a sigmoid (GLU-style ablation). Off by default.
    pub sigmoid_gate: bool,
}

impl<'g, T: Scalar> GatingParams<'g, T> {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        n_tokens: usize,
        d_model: usize,
        d_token_mix: usize,
        d_channel_mix: usize,
    ) -> Result<()> {
        MixerSubunitParams::init(
            init,
            &join(prefix, "mixer"),
            n_tokens,
            d_model,
            d_token_mix,
            d_channel_mix,
        )?;
        Linear::init(init, &join(prefix, "linear"), d_model, d_model)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str, sigmoid_gate: bool) -> Result<Self> {
        Ok(Self {
            mixer: MixerSubunitParams::bind(p, &join(prefix, "mixer"))?,
            linear_proj: Linear::bind(p, &join(prefix, "linear"))?,
            sigmoid_gate,
        })
    }
}

/// `gate ⊙ Linear(input)`.
pub fn apply_gate<'g, T: Scalar>(
    gate: Var<'g, T>,
    input: Var<'g, T>,
    linear_proj: &Linear<'g, T>,
) -> TensorResult<Var<'g, T>> {
    gate.mul(linear_proj.forward(input)?)
}

/// `MLPMixer(i) ⊙ Linear(i)`; the gate is used as-is unless
/// `sigmoid_gate` is set.
pub fn nin_gating<'g, T: Scalar>(
    i: Var<'g, T>,
    p: &GatingParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    let mut gate = mixer_block(i, &p.mixer)?;
    if p.sigmoid_gate {
        gate = gate.sigmoid();
    }
    apply_gate(gate, i, &p.linear_proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{graph, randn, rng};
    use crate::nn::{LayerNormParams, MlpParams};
    use crate::tensor::{Graph, Tensor};

    fn random_params(g: &Graph<f64>, n: usize, d: usize, seed: u64) -> GatingParams<'_, f64> {
        let mut r = rng(seed);
        let mut lin = |a: usize, b: usize| Linear {
            weight: g.param(randn(&[a, b], 0.5, &mut r)),
            bias: Some(g.param(randn(&[b], 0.1, &mut r))),
        };
        let token_mlp = MlpParams {
            fc1: lin(n, 3),
            fc2: lin(3, n),
        };
        let channel_mlp = MlpParams {
            fc1: lin(d, 5),
            fc2: lin(5, d),
        };
        let linear_proj = lin(d, d);
        let norm = || LayerNormParams {
            gamma: g.param(Tensor::ones([d])),
            beta: g.param(Tensor::zeros([d])),
        };
        GatingParams {
            mixer: MixerSubunitParams {
                token_norm: norm(),
                token_mlp,
                channel_norm: norm(),
                channel_mlp,
            },
            linear_proj,
            sigmoid_gate: false,
        }
    }

    #[test]
    fn unit_gate_passes_projection_through() {
        let g = graph();
        let p = random_params(&g, 3, 4, 1);
        let i = g.constant(randn(&[2, 3, 4], 1.0, &mut rng(2)));
        let ones = g.constant(Tensor::ones([2, 3, 4]));
        let out = apply_gate(ones, i, &p.linear_proj).unwrap();
        assert!(out
            .value()
            .bit_eq(&p.linear_proj.forward(i).unwrap().value()));
    }

    #[test]
    fn zero_projection_annihilates() {
        let g = graph();
        let mut p = random_params(&g, 3, 4, 3);
        p.linear_proj = Linear {
            weight: g.constant(Tensor::zeros([4, 4])),
            bias: Some(g.constant(Tensor::zeros([4]))),
        };
        let i = g.constant(randn(&[1, 3, 4], 1.0, &mut rng(4)));
        let out = nin_gating(i, &p).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_in_projection_weights_for_fixed_gate() {
        let g = graph();
        let p = random_params(&g, 3, 4, 5);
        let i = g.constant(randn(&[1, 3, 4], 1.0, &mut rng(6)));
        let base = nin_gating(i, &p).unwrap().value();
        let c = -2.5;
        let scaled = GatingParams {
            linear_proj: Linear {
                weight: p.linear_proj.weight.scale(c),
                bias: Some(p.linear_proj.bias.unwrap().scale(c)),
            },
            ..p
        };
        let out = nin_gating(i, &scaled).unwrap().value();
        for (a, b) in out.data().iter().zip(base.data()) {
            assert!((a - c * b).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_gate_variant_bounds_the_gate() {
        let g = graph();
        let p = GatingParams {
            sigmoid_gate: true,
            ..random_params(&g, 3, 4, 7)
        };
        let i = g.constant(randn(&[1, 3, 4], 1.0, &mut rng(8)));
        let out = nin_gating(i, &p).unwrap().value();
        let proj = p.linear_proj.forward(i).unwrap().value();
        for (o, l) in out.data().iter().zip(proj.data()) {
            assert!(o.abs() <= l.abs());
        }
    }
}
