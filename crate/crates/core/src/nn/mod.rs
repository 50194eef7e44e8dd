//! Differentiable building blocks: attention, token/channel mixing,
//! depthwise-convolution feed-forward, and the mixer-generated gating unit.
//!
//! Every parameter bundle has an `init` (registers tensors in a
//! [`ParamStore`] under a prefix) and a `bind` (fetches the matching graph
//! leaves). Tests can also assemble bundles directly from hand-set [`Var`]s.

mod attention;
mod blocks;
mod conv_ffn;
mod gating;
mod mixer;

pub use attention::{attention, attention_with_weights, AttentionParams};
pub use blocks::{
    localvit_block, nin_block, vit_block, LocalVitBlockParams, NinBlockParams, VitBlockParams,
};
pub use conv_ffn::{conv_ffn, ConvFfnParams};
pub use gating::{apply_gate, nin_gating, GatingParams};
pub use mixer::{mixer_block, MixerSubunitParams};

use rand::Rng;

use crate::error::Result;
use crate::params::{trunc_normal, BoundParams, ParamStore};
use crate::tensor::{Scalar, Tensor, TensorError, TensorResult, Var};

/// Layer-norm epsilon used throughout.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Standard deviation of truncated-normal weight initialization.
pub const INIT_STD: f64 = 0.02;
/// Depthwise kernel size of the convolutional feed-forward.
pub const DW_KERNEL: usize = 3;

/// Width of every block. Token count is fixed by image and patch geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub n_tokens: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub d_token_mix: usize,
    pub d_channel_mix: usize,
    /// Patch grid (rows, cols); `rows * cols == n_tokens`.
    pub grid: (usize, usize),
}

/// Registers freshly initialized tensors: truncated normal weights, zero
/// biases, unit/zero norm affine.
pub struct Initializer<'a, T: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Initializer<'_, T, R> {
    pub fn weight(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let w = trunc_normal(shape, INIT_STD, self.rng);
        self.store.insert(name, w)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.store.insert(name, Tensor::zeros(shape.to_vec()))
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.store.insert(name, Tensor::ones(shape.to_vec()))
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Per-token affine map over the last axis; weight is `[d_in, d_out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear<'g, T: Scalar> {
    pub weight: Var<'g, T>,
    pub bias: Option<Var<'g, T>>,
}

impl<'g, T: Scalar> Linear<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<()> {
        init.weight(&join(prefix, "weight"), &[d_in, d_out])?;
        init.zeros(&join(prefix, "bias"), &[d_out])
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: p.get(&join(prefix, "weight"))?,
            bias: Some(p.get(&join(prefix, "bias"))?),
        })
    }

    pub fn forward(&self, x: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        let y = x.matmul(self.weight)?;
        match self.bias {
            Some(b) => y.add_broadcast(b),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNormParams<'g, T: Scalar> {
    pub gamma: Var<'g, T>,
    pub beta: Var<'g, T>,
}

impl<'g, T: Scalar> LayerNormParams<'g, T> {
    pub fn init<R: Rng>(init: &mut Initializer<'_, T, R>, prefix: &str, d: usize) -> Result<()> {
        init.ones(&join(prefix, "gamma"), &[d])?;
        init.zeros(&join(prefix, "beta"), &[d])
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: p.get(&join(prefix, "gamma"))?,
            beta: p.get(&join(prefix, "beta"))?,
        })
    }

    pub fn forward(&self, x: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        x.layer_norm(self.gamma, self.beta, T::from_f64(LAYER_NORM_EPS))
    }
}

/// Two-layer perceptron with GELU between the layers.
#[derive(Clone, Copy, Debug)]
pub struct MlpParams<'g, T: Scalar> {
    pub fc1: Linear<'g, T>,
    pub fc2: Linear<'g, T>,
}

impl<'g, T: Scalar> MlpParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
    ) -> Result<()> {
        Linear::init(init, &join(prefix, "fc1"), d_in, d_hidden)?;
        Linear::init(init, &join(prefix, "fc2"), d_hidden, d_out)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            fc1: Linear::bind(p, &join(prefix, "fc1"))?,
            fc2: Linear::bind(p, &join(prefix, "fc2"))?,
        })
    }

    pub fn forward(&self, x: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        self.fc2.forward(self.fc1.forward(x)?.gelu())
    }

    pub fn d_in(&self) -> usize {
        self.fc1.weight.shape()[0]
    }
}

fn rank3(op: &'static str, x: Var<'_, impl Scalar>) -> TensorResult<(usize, usize, usize)> {
    match x.shape()[..] {
        [b, n, d] => Ok((b, n, d)),
        ref s => Err(TensorError::Rank {
            op,
            expected: "3 (batch, tokens, d_model)".into(),
            shape: s.to_vec(),
        }),
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::tensor::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                std * z
            })
            .collect();
        Tensor::new(shape.to_vec(), v).unwrap()
    }

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Binds a store after overwriting every parameter with N(0, std²) values.
    pub fn randomized(store: &ParamStore<f64>, std: f64, seed: u64) -> ParamStore<f64> {
        let mut r = rng(seed);
        let mut out = store.clone();
        for (_, t) in out.iter_mut() {
            *t = randn(t.shape(), std, &mut r);
        }
        out
    }

    pub fn zero_named(store: &mut ParamStore<f64>, suffixes: &[&str]) {
        for (name, t) in store.iter_mut() {
            if suffixes.iter().any(|s| name.ends_with(s)) {
                *t = Tensor::zeros(t.shape().to_vec());
            }
        }
    }

    pub fn graph() -> Graph<f64> {
        Graph::new()
    }
}
