//! Closed-form multiply-accumulate counts per sample.
//!
//! Counted: every matrix product, every depthwise-convolution tap (padding
//! taps included), and the elementwise gate product. Not counted: additions,
//! normalization, activations, softmax, pooling. These are exactly the
//! operations the graph's MAC counter instruments, so the two must agree.
//!
//! With `n` tokens, width `d`, `h` heads of width `d_k = d/h`, per block:
//!
//! ```text
//! ViT        4·n·d²  +  2·h·n²·d_k  +  2·n·d·d_mlp
//! Mixer      2·d·n·d_tok  +  2·n·d·d_ch
//! Local-ViT  4·n·d²  +  2·h·n²·d_k  +  n·d·d_mlp + 9·n·d_mlp + n·d_mlp·d
//! NiNformer  2·d·n·d_tok + 2·n·d·d_ch  +  n·d²  +  n·d  +  2·n·d·d_mlp
//! ```
//!
//! plus `n·ps²c·d` for the patch embedding and `d·C` for the head. Only
//! the attention score and mix term carries `n²`.

use serde::{Deserialize, Serialize};

use crate::models::{ModelConfig, Variant};
use crate::nn::DW_KERNEL;

/// MACs of one block, split by sublayer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFlops {
    /// Q, K, V and output projections.
    pub attention_projections: u64,
    /// `Q·Kᵀ` and `softmax(·)·V`; the only quadratic term.
    pub attention_scores: u64,
    pub token_mixing: u64,
    pub channel_mixing: u64,
    pub gate_projection: u64,
    pub gate_product: u64,
    pub mlp: u64,
    pub conv_pointwise: u64,
    pub conv_depthwise: u64,
}

impl BlockFlops {
    pub fn total(&self) -> u64 {
        self.attention_projections
            + self.attention_scores
            + self.token_mixing
            + self.channel_mixing
            + self.gate_projection
            + self.gate_product
            + self.mlp
            + self.conv_pointwise
            + self.conv_depthwise
    }

    pub fn attention(&self) -> u64 {
        self.attention_projections + self.attention_scores
    }
}

/// Per-sample MACs of a whole classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopModel {
    pub embed: u64,
    pub block: BlockFlops,
    pub n_blocks: u64,
    pub head: u64,
}

impl FlopModel {
    pub fn total(&self) -> u64 {
        self.embed + self.n_blocks * self.block.total() + self.head
    }
}

pub fn block_flops(
    variant: Variant,
    n: u64,
    d: u64,
    heads: u64,
    d_mlp: u64,
    d_tok: u64,
    d_ch: u64,
) -> BlockFlops {
    let mut f = BlockFlops::default();
    let attention = |f: &mut BlockFlops| {
        let dk = d / heads.max(1);
        f.attention_projections = 4 * n * d * d;
        f.attention_scores = 2 * heads * n * n * dk;
    };
    let mixer = |f: &mut BlockFlops| {
        f.token_mixing = 2 * d * n * d_tok;
        f.channel_mixing = 2 * n * d * d_ch;
    };
    match variant {
        Variant::Vit => {
            attention(&mut f);
            f.mlp = 2 * n * d * d_mlp;
        }
        Variant::MlpMixer => mixer(&mut f),
        Variant::LocalVit => {
            attention(&mut f);
            f.conv_pointwise = 2 * n * d * d_mlp;
            f.conv_depthwise = (DW_KERNEL * DW_KERNEL) as u64 * n * d_mlp;
        }
        Variant::Ninformer => {
            mixer(&mut f);
            f.gate_projection = n * d * d;
            f.gate_product = n * d;
            f.mlp = 2 * n * d * d_mlp;
        }
    }
    f
}

/// Closed-form per-sample MAC count of `cfg`.
pub fn count_flops(cfg: &ModelConfig) -> FlopModel {
    let n = cfg.n_tokens() as u64;
    let d = cfg.d_model as u64;
    FlopModel {
        embed: n * cfg.patch_dim() as u64 * d,
        block: block_flops(
            cfg.variant,
            n,
            d,
            cfg.n_heads as u64,
            cfg.d_mlp as u64,
            cfg.d_token_mix as u64,
            cfg.d_channel_mix as u64,
        ),
        n_blocks: cfg.n_blocks as u64,
        head: d * cfg.n_classes as u64,
    }
}
