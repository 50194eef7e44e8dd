use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BlockDims, DW_KERNEL};

/// Block family stacked by a classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vit,
    MlpMixer,
    LocalVit,
    Ninformer,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vit,
        Variant::MlpMixer,
        Variant::LocalVit,
        Variant::Ninformer,
    ];

    /// Short name used by presets and report files.
    pub fn short_name(self) -> &'static str {
        match self {
            Variant::Vit => "vit",
            Variant::MlpMixer => "mixer",
            Variant::LocalVit => "localvit",
            Variant::Ninformer => "ninformer",
        }
    }

    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Vit | Variant::LocalVit)
    }

    pub fn uses_token_mixing(self) -> bool {
        matches!(self, Variant::MlpMixer | Variant::Ninformer)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vit" => Ok(Variant::Vit),
            "mixer" | "mlp_mixer" | "mlpmixer" => Ok(Variant::MlpMixer),
            "localvit" | "local_vit" => Ok(Variant::LocalVit),
            "ninformer" | "nin" => Ok(Variant::Ninformer),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected vit, mixer, localvit or ninformer)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSize {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Every architectural hyperparameter of a classifier.
///
/// Widths that a variant does not use (`n_heads` for the mixer, say) are
/// still carried so one config shape covers all four models; they are
/// validated only where they matter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub image_size: ImageSize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Hidden width of the per-token MLP (and of the conv feed-forward).
    pub d_mlp: usize,
    /// Hidden width of the token-mixing MLP.
    pub d_token_mix: usize,
    /// Hidden width of the channel-mixing MLP.
    pub d_channel_mix: usize,
    pub n_classes: usize,
    pub use_positional_embedding: bool,
    /// Squash the NiN gate through a sigmoid. Ablation only.
    #[serde(default)]
    pub sigmoid_gate: bool,
}

impl ModelConfig {
    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_size.height / self.patch_size.max(1),
            self.image_size.width / self.patch_size.max(1),
        )
    }

    pub fn n_tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    /// Flattened patch length before projection, `ps² · c`.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.image_size.channels
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims {
            n_tokens: self.n_tokens(),
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_mlp: self.d_mlp,
            d_token_mix: self.d_token_mix,
            d_channel_mix: self.d_channel_mix,
            grid: self.grid(),
        }
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let ImageSize {
            height: h,
            width: w,
            channels: c,
        } = self.image_size;
        let ps = self.patch_size;
        if h == 0 || w == 0 || c == 0 {
            bad.push(format!("image size {h}x{w}x{c} must be positive"));
        }
        if ps == 0 {
            bad.push("patch_size must be positive".into());
        } else if h % ps != 0 || w % ps != 0 {
            bad.push(format!("image {h}x{w} is not divisible by patch size {ps}"));
        }
        if self.d_model == 0 {
            bad.push("d_model must be positive".into());
        }
        if self.n_classes == 0 {
            bad.push("n_classes must be positive".into());
        }
        if self.variant.uses_attention() {
            if self.n_heads == 0 {
                bad.push("n_heads must be positive".into());
            } else if self.d_model % self.n_heads != 0 {
                bad.push(format!(
                    "d_model {} is not divisible by n_heads {}",
                    self.d_model, self.n_heads
                ));
            }
        }
        if self.variant != Variant::MlpMixer && self.d_mlp == 0 {
            bad.push("d_mlp must be positive".into());
        }
        if self.variant.uses_token_mixing() && (self.d_token_mix == 0 || self.d_channel_mix == 0) {
            bad.push("d_token_mix and d_channel_mix must be positive".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (n, d) = (self.n_tokens(), self.d_model);
        let linear = |a: usize, b: usize| a * b + b;
        let mlp = |a: usize, h: usize, b: usize| linear(a, h) + linear(h, b);
        let norm = 2 * d;
        let attention = 4 * d * d;
        let mixer = 2 * norm + mlp(n, self.d_token_mix, n) + mlp(d, self.d_channel_mix, d);
        let block = match self.variant {
            Variant::Vit => 2 * norm + attention + mlp(d, self.d_mlp, d),
            Variant::MlpMixer => mixer,
            Variant::LocalVit => {
                let dh = self.d_mlp;
                2 * norm
                    + attention
                    + linear(d, dh)
                    + DW_KERNEL * DW_KERNEL * dh
                    + dh
                    + linear(dh, d)
            }
            Variant::Ninformer => 2 * norm + mixer + linear(d, d) + mlp(d, self.d_mlp, d),
        };
        let pos = if self.use_positional_embedding {
            n * d
        } else {
            0
        };
        linear(self.patch_dim(), d) + pos + self.n_blocks * block + linear(d, self.n_classes)
    }
}
