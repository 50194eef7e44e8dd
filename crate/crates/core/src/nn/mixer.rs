use rand::Rng;

use super::{join, rank3, Initializer, LayerNormParams, MlpParams};
use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Scalar, TensorError, TensorResult, Var};

/// One MLP-Mixer block: token-mixing MLP over the transposed sequence
/// (`n_tokens -> d_token_mix -> n_tokens`) then channel-mixing MLP
/// (`d_model -> d_channel_mix -> d_model`), each pre-normed and residual.
#[derive(Clone, Copy, Debug)]
pub struct MixerSubunitParams<'g, T: Scalar> {
    pub token_norm: LayerNormParams<'g, T>,
    pub token_mlp: MlpParams<'g, T>,
    pub channel_norm: LayerNormParams<'g, T>,
    pub channel_mlp: MlpParams<'g, T>,
}

impl<'g, T: Scalar> MixerSubunitParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        n_tokens: usize,
        d_model: usize,
        d_token_mix: usize,
        d_channel_mix: usize,
    ) -> Result<()> {
        LayerNormParams::init(init, &join(prefix, "token_norm"), d_model)?;
        MlpParams::init(
            init,
            &join(prefix, "token_mlp"),
            n_tokens,
            d_token_mix,
            n_tokens,
        )?;
        LayerNormParams::init(init, &join(prefix, "channel_norm"), d_model)?;
        MlpParams::init(
            init,
            &join(prefix, "channel_mlp"),
            d_model,
            d_channel_mix,
            d_model,
        )
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            token_norm: LayerNormParams::bind(p, &join(prefix, "token_norm"))?,
            token_mlp: MlpParams::bind(p, &join(prefix, "token_mlp"))?,
            channel_norm: LayerNormParams::bind(p, &join(prefix, "channel_norm"))?,
            channel_mlp: MlpParams::bind(p, &join(prefix, "channel_mlp"))?,
        })
    }
}

pub fn mixer_block<'g, T: Scalar>(
    x: Var<'g, T>,
    p: &MixerSubunitParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    let (_, n, _) = rank3("mixer_block", x)?;
    let expected = p.token_mlp.d_in();
    if n != expected {
        return Err(TensorError::ShapeMismatch {
            op: "mixer_block (token count)",
            lhs: x.shape(),
            rhs: vec![expected],
        });
    }
    let mixed = p
        .token_mlp
        .forward(p.token_norm.forward(x)?.transpose_last2()?)?
        .transpose_last2()?;
    let y = mixed.add(x)?;
    p.channel_mlp.forward(p.channel_norm.forward(y)?)?.add(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{graph, randn, rng};
    use crate::nn::Linear;
    use crate::tensor::{Graph, Tensor};

    fn t<'g>(g: &'g Graph<f64>, shape: &[usize], v: &[f64]) -> Var<'g, f64> {
        g.param(Tensor::from_f64(shape.to_vec(), v).unwrap())
    }

    fn unit_norm(g: &Graph<f64>, d: usize) -> LayerNormParams<'_, f64> {
        LayerNormParams {
            gamma: g.param(Tensor::ones([d])),
            beta: g.param(Tensor::zeros([d])),
        }
    }

    #[test]
    fn two_token_two_channel_by_hand() {
        // x = [[1, 3], [2, 0]] (tokens × channels).
        // LN rows with eps=1e-5: each row is ±s where s = 1/sqrt(1 + eps).
        //   row0 = [-s, s], row1 = [s, -s]
        // Token MLP (over tokens, width 1, identity weights, zero bias):
        //   fc1 = [[1],[0]] picks token0, fc2 = [[0, 1]] writes it into token1.
        //   For each channel c: hidden = gelu(ln[0][c]); out = [0, hidden].
        // y = x + transpose(out): y[0] = x[0]; y[1][c] = x[1][c] + gelu(ln[0][c])
        // Channel MLP: zero weights, bias2 = [0.5, -0.5]  → z = y + bias2.
        let g = graph();
        let x = t(&g, &[1, 2, 2], &[1.0, 3.0, 2.0, 0.0]);
        let p = MixerSubunitParams {
            token_norm: unit_norm(&g, 2),
            token_mlp: MlpParams {
                fc1: Linear {
                    weight: t(&g, &[2, 1], &[1.0, 0.0]),
                    bias: Some(t(&g, &[1], &[0.0])),
                },
                fc2: Linear {
                    weight: t(&g, &[1, 2], &[0.0, 1.0]),
                    bias: Some(t(&g, &[2], &[0.0, 0.0])),
                },
            },
            channel_norm: unit_norm(&g, 2),
            channel_mlp: MlpParams {
                fc1: Linear {
                    weight: t(&g, &[2, 3], &[0.0; 6]),
                    bias: Some(t(&g, &[3], &[0.0; 3])),
                },
                fc2: Linear {
                    weight: t(&g, &[3, 2], &[0.0; 6]),
                    bias: Some(t(&g, &[2], &[0.5, -0.5])),
                },
            },
        };
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        let gelu = |v: f64| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
        let expect = [
            1.0 + 0.5,
            3.0 - 0.5,
            2.0 + gelu(-s) + 0.5,
            0.0 + gelu(s) - 0.5,
        ];
        let z = mixer_block(x, &p).unwrap().value();
        for (a, e) in z.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn token_count_is_bound_to_weights() {
        let g = graph();
        let mut r = rng(1);
        fn mlp<'g>(
            g: &'g Graph<f64>,
            a: usize,
            h: usize,
            r: &mut rand_chacha::ChaCha8Rng,
        ) -> MlpParams<'g, f64> {
            MlpParams {
                fc1: Linear {
                    weight: g.param(randn(&[a, h], 0.1, r)),
                    bias: Some(g.param(Tensor::zeros([h]))),
                },
                fc2: Linear {
                    weight: g.param(randn(&[h, a], 0.1, r)),
                    bias: Some(g.param(Tensor::zeros([a]))),
                },
            }
        }
        let p = MixerSubunitParams {
            token_norm: unit_norm(&g, 4),
            token_mlp: mlp(&g, 3, 5, &mut r),
            channel_norm: unit_norm(&g, 4),
            channel_mlp: mlp(&g, 4, 6, &mut r),
        };
        let ok = g.constant(randn(&[2, 3, 4], 1.0, &mut r));
        assert_eq!(mixer_block(ok, &p).unwrap().shape(), vec![2, 3, 4]);
        let bad = g.constant(randn(&[2, 5, 4], 1.0, &mut r));
        assert!(matches!(
            mixer_block(bad, &p),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }
}
