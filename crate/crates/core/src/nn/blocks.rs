use rand::Rng;

use super::{
    attention, conv_ffn, join, nin_gating, rank3, AttentionParams, BlockDims, ConvFfnParams,
    GatingParams, Initializer, LayerNormParams, MlpParams,
};
use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Scalar, TensorResult, Var};

/// Pre-norm attention sublayer followed by a pre-norm MLP sublayer.
#[derive(Clone, Copy, Debug)]
pub struct VitBlockParams<'g, T: Scalar> {
    pub norm1: LayerNormParams<'g, T>,
    pub attn: AttentionParams<'g, T>,
    pub norm2: LayerNormParams<'g, T>,
    pub mlp: MlpParams<'g, T>,
}

impl<'g, T: Scalar> VitBlockParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        dims: &BlockDims,
    ) -> Result<()> {
        let d = dims.d_model;
        LayerNormParams::init(init, &join(prefix, "norm1"), d)?;
        AttentionParams::init(init, &join(prefix, "attn"), d)?;
        LayerNormParams::init(init, &join(prefix, "norm2"), d)?;
        MlpParams::init(init, &join(prefix, "mlp"), d, dims.d_mlp, d)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str, dims: &BlockDims) -> Result<Self> {
        Ok(Self {
            norm1: LayerNormParams::bind(p, &join(prefix, "norm1"))?,
            attn: AttentionParams::bind(p, &join(prefix, "attn"), dims.n_heads)?,
            norm2: LayerNormParams::bind(p, &join(prefix, "norm2"))?,
            mlp: MlpParams::bind(p, &join(prefix, "mlp"))?,
        })
    }
}

pub fn vit_block<'g, T: Scalar>(
    x: Var<'g, T>,
    p: &VitBlockParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    rank3("vit_block", x)?;
    let y = attention(p.norm1.forward(x)?, &p.attn)?.add(x)?;
    p.mlp.forward(p.norm2.forward(y)?)?.add(y)
}

/// Attention sublayer followed by the convolutional feed-forward sublayer.
#[derive(Clone, Copy, Debug)]
pub struct LocalVitBlockParams<'g, T: Scalar> {
    pub norm1: LayerNormParams<'g, T>,
    pub attn: AttentionParams<'g, T>,
    pub norm2: LayerNormParams<'g, T>,
    pub conv: ConvFfnParams<'g, T>,
}

impl<'g, T: Scalar> LocalVitBlockParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        dims: &BlockDims,
    ) -> Result<()> {
        let d = dims.d_model;
        LayerNormParams::init(init, &join(prefix, "norm1"), d)?;
        AttentionParams::init(init, &join(prefix, "attn"), d)?;
        LayerNormParams::init(init, &join(prefix, "norm2"), d)?;
        ConvFfnParams::init(init, &join(prefix, "conv"), d, dims.d_mlp)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str, dims: &BlockDims) -> Result<Self> {
        Ok(Self {
            norm1: LayerNormParams::bind(p, &join(prefix, "norm1"))?,
            attn: AttentionParams::bind(p, &join(prefix, "attn"), dims.n_heads)?,
            norm2: LayerNormParams::bind(p, &join(prefix, "norm2"))?,
            conv: ConvFfnParams::bind(p, &join(prefix, "conv"))?,
        })
    }
}

pub fn localvit_block<'g, T: Scalar>(
    x: Var<'g, T>,
    grid: (usize, usize),
    p: &LocalVitBlockParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    rank3("localvit_block", x)?;
    let y = attention(p.norm1.forward(x)?, &p.attn)?.add(x)?;
    conv_ffn(p.norm2.forward(y)?, grid, &p.conv)?.add(y)
}

/// Gating sublayer (inner mixer generates the gate) followed by a per-token MLP.
#[derive(Clone, Copy, Debug)]
pub struct NinBlockParams<'g, T: Scalar> {
    pub norm1: LayerNormParams<'g, T>,
    pub gating: GatingParams<'g, T>,
    pub norm2: LayerNormParams<'g, T>,
    pub mlp: MlpParams<'g, T>,
}

impl<'g, T: Scalar> NinBlockParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        dims: &BlockDims,
    ) -> Result<()> {
        let d = dims.d_model;
        LayerNormParams::init(init, &join(prefix, "norm1"), d)?;
        GatingParams::init(
            init,
            &join(prefix, "gating"),
            dims.n_tokens,
            d,
            dims.d_token_mix,
            dims.d_channel_mix,
        )?;
        LayerNormParams::init(init, &join(prefix, "norm2"), d)?;
        MlpParams::init(init, &join(prefix, "mlp"), d, dims.d_mlp, d)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str, sigmoid_gate: bool) -> Result<Self> {
        Ok(Self {
            norm1: LayerNormParams::bind(p, &join(prefix, "norm1"))?,
            gating: GatingParams::bind(p, &join(prefix, "gating"), sigmoid_gate)?,
            norm2: LayerNormParams::bind(p, &join(prefix, "norm2"))?,
            mlp: MlpParams::bind(p, &join(prefix, "mlp"))?,
        })
    }
}

pub fn nin_block<'g, T: Scalar>(
    x: Var<'g, T>,
    p: &NinBlockParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    rank3("nin_block", x)?;
    let y = nin_gating(p.norm1.forward(x)?, &p.gating)?.add(x)?;
    p.mlp.forward(p.norm2.forward(y)?)?.add(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{randn, randomized, rng, zero_named};
    use crate::nn::{mixer_block, MixerSubunitParams};
    use crate::params::ParamStore;
    use crate::tensor::Graph;

    const DIMS: BlockDims = BlockDims {
        n_tokens: 6,
        d_model: 8,
        n_heads: 2,
        d_mlp: 12,
        d_token_mix: 5,
        d_channel_mix: 7,
        grid: (2, 3),
    };

    fn store(
        f: impl Fn(&mut Initializer<'_, f64, rand_chacha::ChaCha8Rng>) -> Result<()>,
    ) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut r = rng(0);
        f(&mut Initializer {
            store: &mut s,
            rng: &mut r,
        })
        .unwrap();
        randomized(&s, 0.3, 11)
    }

    fn check_identity(
        mut s: ParamStore<f64>,
        zero: &[&str],
        run: impl Fn(&Graph<f64>, &ParamStore<f64>) -> bool,
    ) {
        assert!(
            !run(&Graph::new(), &s),
            "randomized block should not be the identity"
        );
        zero_named(&mut s, zero);
        assert!(run(&Graph::new(), &s), "zeroed block must be the identity");
    }

    #[test]
    fn zeroed_output_weights_make_every_block_the_identity() {
        let x = randn(&[2, 6, 8], 1.0, &mut rng(5));

        let s = store(|i| VitBlockParams::init(i, "b", &DIMS));
        check_identity(
            s,
            &["attn.w_o", "mlp.fc2.weight", "mlp.fc2.bias"],
            |g, s| {
                let p = VitBlockParams::bind(&s.bind(g), "b", &DIMS).unwrap();
                let xv = g.constant(x.clone());
                vit_block(xv, &p).unwrap().value().bit_eq(&x)
            },
        );

        let s = store(|i| LocalVitBlockParams::init(i, "b", &DIMS));
        check_identity(
            s,
            &["attn.w_o", "conv.project.weight", "conv.project.bias"],
            |g, s| {
                let p = LocalVitBlockParams::bind(&s.bind(g), "b", &DIMS).unwrap();
                localvit_block(g.constant(x.clone()), DIMS.grid, &p)
                    .unwrap()
                    .value()
                    .bit_eq(&x)
            },
        );

        let s = store(|i| NinBlockParams::init(i, "b", &DIMS));
        check_identity(
            s,
            &[
                "gating.linear.weight",
                "gating.linear.bias",
                "b.mlp.fc2.weight",
                "b.mlp.fc2.bias",
            ],
            |g, s| {
                let p = NinBlockParams::bind(&s.bind(g), "b", false).unwrap();
                nin_block(g.constant(x.clone()), &p)
                    .unwrap()
                    .value()
                    .bit_eq(&x)
            },
        );

        let s = store(|i| MixerSubunitParams::init(i, "b", 6, 8, 5, 7));
        check_identity(s, &["fc2.weight", "fc2.bias"], |g, s| {
            let p = MixerSubunitParams::bind(&s.bind(g), "b").unwrap();
            mixer_block(g.constant(x.clone()), &p)
                .unwrap()
                .value()
                .bit_eq(&x)
        });
    }

    #[test]
    fn blocks_preserve_shape() {
        let x = randn(&[3, 6, 8], 1.0, &mut rng(6));
        let g = Graph::new();
        let s = store(|i| {
            VitBlockParams::init(i, "vit", &DIMS)?;
            LocalVitBlockParams::init(i, "local", &DIMS)?;
            NinBlockParams::init(i, "nin", &DIMS)
        });
        let b = s.bind(&g);
        let xv = g.constant(x);
        let vit = VitBlockParams::bind(&b, "vit", &DIMS).unwrap();
        let local = LocalVitBlockParams::bind(&b, "local", &DIMS).unwrap();
        let nin = NinBlockParams::bind(&b, "nin", false).unwrap();
        assert_eq!(vit_block(xv, &vit).unwrap().shape(), vec![3, 6, 8]);
        assert_eq!(
            localvit_block(xv, DIMS.grid, &local).unwrap().shape(),
            vec![3, 6, 8]
        );
        assert_eq!(nin_block(xv, &nin).unwrap().shape(), vec![3, 6, 8]);
        assert!(vit_block(g.constant(crate::Tensor::zeros([6, 8])), &vit).is_err());
    }
}
