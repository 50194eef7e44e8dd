//! End-to-end classifiers: patch embedding, `n_blocks` homogeneous blocks,
//! global average pooling over tokens, linear head.

mod checkpoint;
mod config;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ImageSize, ModelConfig, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    localvit_block, mixer_block, nin_block, vit_block, Initializer, Linear, LocalVitBlockParams,
    MixerSubunitParams, NinBlockParams, VitBlockParams,
};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, TensorError, Var};

/// A configuration together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

/// Parameters of a whole classifier bound to one graph.
pub struct ModelParams<'g, T: Scalar> {
    pub bound: BoundParams<'g, T>,
    pub embed: Linear<'g, T>,
    pub pos_embed: Option<Var<'g, T>>,
    pub blocks: Vec<BlockParams<'g, T>>,
    pub head: Linear<'g, T>,
}

pub enum BlockParams<'g, T: Scalar> {
    Vit(VitBlockParams<'g, T>),
    Mixer(MixerSubunitParams<'g, T>),
    LocalVit(LocalVitBlockParams<'g, T>),
    Ninformer(NinBlockParams<'g, T>),
}

fn block_prefix(i: usize) -> String {
    format!("block{i}")
}

/// Builds a freshly initialized model. Identical seeds give bit-identical
/// parameters; values are drawn in 64-bit and rounded to `T`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Initializer {
        store: &mut store,
        rng: &mut rng,
    };
    let (n, d) = (cfg.n_tokens(), cfg.d_model);
    Linear::init(&mut init, "patch_embed", cfg.patch_dim(), d)?;
    if cfg.use_positional_embedding {
        init.weight("pos_embed", &[n, d])?;
    }
    let dims = cfg.block_dims();
    for i in 0..cfg.n_blocks {
        let p = block_prefix(i);
        match cfg.variant {
            Variant::Vit => VitBlockParams::init(&mut init, &p, &dims)?,
            Variant::MlpMixer => {
                MixerSubunitParams::init(&mut init, &p, n, d, cfg.d_token_mix, cfg.d_channel_mix)?
            }
            Variant::LocalVit => LocalVitBlockParams::init(&mut init, &p, &dims)?,
            Variant::Ninformer => NinBlockParams::init(&mut init, &p, &dims)?,
        }
    }
    Linear::init(&mut init, "head", d, cfg.n_classes)?;
    Ok(Model {
        config: cfg.clone(),
        params: store,
    })
}

/// Splits `[b, h, w, c]` images into non-overlapping `ps × ps` patches,
/// flattens each in `(row, col, channel)` order, and maps them to `d_model`.
/// Tokens are ordered row-major over the patch grid.
pub fn patch_embed<'g, T: Scalar>(
    images: Var<'g, T>,
    ps: usize,
    embed: &Linear<'g, T>,
) -> Result<Var<'g, T>> {
    let shape = images.shape();
    let [b, h, w, c] = shape[..] else {
        return Err(TensorError::Rank {
            op: "patch_embed",
            expected: "4 (batch, height, width, channels)".into(),
            shape,
        }
        .into());
    };
    if ps == 0 || h % ps != 0 || w % ps != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible by patch size {ps}"
        )));
    }
    let (gh, gw) = (h / ps, w / ps);
    let patches = images
        .reshape(&[b, gh, ps, gw, ps, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, gh * gw, ps * ps * c])?;
    Ok(embed.forward(patches)?)
}

impl<T: Scalar> Model<T> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        build_model(cfg, seed)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Registers the parameters on `g` and resolves them into block bundles.
    pub fn bind<'g>(&self, g: &'g Graph<T>) -> Result<ModelParams<'g, T>> {
        self.bind_store(&self.params, g)
    }

    /// As [`Model::bind`] but with a substitute store of the same layout.
    pub fn bind_store<'g>(
        &self,
        store: &ParamStore<T>,
        g: &'g Graph<T>,
    ) -> Result<ModelParams<'g, T>> {
        self.resolve(store.bind(g))
    }

    /// Resolves already registered parameters into block bundles.
    pub fn resolve<'g>(&self, bound: BoundParams<'g, T>) -> Result<ModelParams<'g, T>> {
        let cfg = &self.config;
        let dims = cfg.block_dims();
        let blocks = (0..cfg.n_blocks)
            .map(|i| {
                let p = block_prefix(i);
                Ok(match cfg.variant {
                    Variant::Vit => BlockParams::Vit(VitBlockParams::bind(&bound, &p, &dims)?),
                    Variant::MlpMixer => BlockParams::Mixer(MixerSubunitParams::bind(&bound, &p)?),
                    Variant::LocalVit => {
                        BlockParams::LocalVit(LocalVitBlockParams::bind(&bound, &p, &dims)?)
                    }
                    Variant::Ninformer => {
                        BlockParams::Ninformer(NinBlockParams::bind(&bound, &p, cfg.sigmoid_gate)?)
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelParams {
            embed: Linear::bind(&bound, "patch_embed")?,
            pos_embed: if cfg.use_positional_embedding {
                Some(bound.get("pos_embed")?)
            } else {
                None
            },
            blocks,
            head: Linear::bind(&bound, "head")?,
            bound,
        })
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.image_size;
        if shape.len() != 4 || shape[1..] != [s.height, s.width, s.channels] {
            return Err(TensorError::ShapeMismatch {
                op: "forward_classify",
                lhs: shape.to_vec(),
                rhs: vec![0, s.height, s.width, s.channels],
            }
            .into());
        }
        Ok(())
    }

    /// Logits `[b, n_classes]` for images `[b, h, w, c]`. Softmax is left to
    /// the loss and to prediction.
    pub fn forward_classify<'g>(
        &self,
        p: &ModelParams<'g, T>,
        images: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        self.check_images(&images.shape())?;
        let cfg = &self.config;
        let mut x = patch_embed(images, cfg.patch_size, &p.embed)?;
        if let Some(pos) = p.pos_embed {
            x = x.add_broadcast(pos)?;
        }
        let grid = cfg.grid();
        for block in &p.blocks {
            x = match block {
                BlockParams::Vit(bp) => vit_block(x, bp)?,
                BlockParams::Mixer(bp) => mixer_block(x, bp)?,
                BlockParams::LocalVit(bp) => localvit_block(x, grid, bp)?,
                BlockParams::Ninformer(bp) => nin_block(x, bp)?,
            };
        }
        let pooled = x.mean_axis(1)?;
        Ok(p.head.forward(pooled)?)
    }

    /// Tape-free forward pass.
    pub fn logits(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let g = Graph::inference();
        let p = self.bind(&g)?;
        let x = g.constant(images.clone());
        Ok(self.forward_classify(&p, x)?.value())
    }

    /// Arg-max class per image, ties going to the lowest index.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images)?))
    }
}

/// Row-wise arg-max of a `[rows, cols]` tensor; the first maximum wins.
pub fn argmax_rows<T: Scalar>(t: &Tensor<T>) -> Vec<usize> {
    let cols = t.shape().last().copied().unwrap_or(1).max(1);
    t.data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            image_size: ImageSize::new(8, 8, 1),
            patch_size: 4,
            d_model: 8,
            n_blocks: 2,
            n_heads: 2,
            d_mlp: 6,
            d_token_mix: 5,
            d_channel_mix: 7,
            n_classes: 3,
            use_positional_embedding: variant.uses_attention(),
            sigmoid_gate: false,
        }
    }

    #[test]
    fn param_count_law_holds_for_every_variant() {
        for v in Variant::ALL {
            for pos in [false, true] {
                let cfg = ModelConfig {
                    use_positional_embedding: pos,
                    ..toy(v)
                };
                let m = build_model::<f32>(&cfg, 1).unwrap();
                assert_eq!(m.num_params(), cfg.param_count(), "{v}");
            }
        }
    }

    #[test]
    fn same_seed_same_params() {
        let cfg = toy(Variant::Ninformer);
        let a = build_model::<f32>(&cfg, 9).unwrap();
        let b = build_model::<f32>(&cfg, 9).unwrap();
        let c = build_model::<f32>(&cfg, 10).unwrap();
        assert!(a.params.bit_eq(&b.params));
        assert!(!a.params.bit_eq(&c.params));
    }

    #[test]
    fn patches_are_row_major_over_the_grid() {
        // 4x4 single-channel image, ps=2. Identity embedding exposes the
        // flattened patches directly.
        let g = Graph::<f64>::new();
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let x = g.constant(Tensor::new([1, 4, 4, 1], img).unwrap());
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let embed = Linear {
            weight: g.constant(Tensor::new([4, 4], eye).unwrap()),
            bias: None,
        };
        let t = patch_embed(x, 2, &embed).unwrap().value();
        assert_eq!(t.shape(), &[1, 4, 4]);
        #[rustfmt::skip]
        let expect = [
            0.0, 1.0, 4.0, 5.0,
            2.0, 3.0, 6.0, 7.0,
            8.0, 9.0, 12.0, 13.0,
            10.0, 11.0, 14.0, 15.0,
        ];
        assert_eq!(t.data(), &expect);
    }

    #[test]
    fn indivisible_image_is_a_config_error() {
        let g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 30, 30, 1]));
        let embed = Linear {
            weight: g.constant(Tensor::zeros([16, 4])),
            bias: None,
        };
        assert!(matches!(patch_embed(x, 4, &embed), Err(Error::Config(_))));
    }

    #[test]
    fn zero_head_emits_bias() {
        let cfg = toy(Variant::Vit);
        let mut m = build_model::<f64>(&cfg, 3).unwrap();
        *m.params.get_mut("head.weight").unwrap() = Tensor::zeros([8, 3]);
        *m.params.get_mut("head.bias").unwrap() = Tensor::from_f64([3], &[0.5, -1.0, 2.0]).unwrap();
        let imgs = Tensor::from_f64(
            [2, 8, 8, 1],
            &(0..128).map(|i| (i as f64).sin()).collect::<Vec<_>>(),
        )
        .unwrap();
        let l = m.logits(&imgs).unwrap();
        assert_eq!(l.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(m.predict(&imgs).unwrap(), vec![2, 2]);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let m = build_model::<f32>(&toy(Variant::MlpMixer), 0).unwrap();
        assert!(m.logits(&Tensor::zeros([1, 8, 8, 3])).is_err());
        assert!(m.logits(&Tensor::zeros([8, 8, 1])).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        let t = Tensor::from_f64([2, 3], &[1.0, 1.0, 0.0, -1.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows::<f64>(&t), vec![0, 1]);
    }
}
