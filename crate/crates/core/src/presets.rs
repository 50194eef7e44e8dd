//! Named run configurations and `key=value` overrides.
//!
//! Presets are `{vit,mixer,localvit,ninformer}-{mnist,cifar10,cifar100}-{paper,toy}`.
//! `paper` is patch 4, width 256, 4 blocks, 4 heads, every hidden width 512,
//! 100 epochs of batch 128 at rate 1e-3. `toy` is width 64, 2 blocks, 2 heads,
//! hidden widths 128, 3 epochs of batch 64 on the first 10000 training images.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Variant};
use crate::training::TrainConfig;

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetName,
    /// Train on only the first `n` training images.
    #[serde(default)]
    pub train_subset: Option<usize>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Paper,
    Toy,
}

pub const TOY_TRAIN_SUBSET: usize = 10_000;

/// Builds the config for a variant, dataset and scale.
pub fn preset_config(variant: Variant, dataset: DatasetName, scale: Scale) -> RunConfig {
    let (d, blocks, heads, hidden, epochs, batch, subset) = match scale {
        Scale::Paper => (256, 4, 4, 512, 100, 128, None),
        // Smaller batches give three epochs enough optimizer steps.
        Scale::Toy => (64, 2, 2, 128, 3, 64, Some(TOY_TRAIN_SUBSET)),
    };
    RunConfig {
        dataset,
        train_subset: subset,
        model: ModelConfig {
            variant,
            image_size: dataset.image_size(),
            patch_size: 4,
            d_model: d,
            n_blocks: blocks,
            n_heads: heads,
            d_mlp: hidden,
            d_token_mix: hidden,
            d_channel_mix: hidden,
            n_classes: dataset.n_classes(),
            use_positional_embedding: variant.uses_attention(),
            sigmoid_gate: false,
        },
        train: TrainConfig {
            epochs,
            batch_size: batch,
            ..TrainConfig::default()
        },
    }
}

/// Every preset name, in a stable order.
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        for d in DatasetName::ALL {
            for s in ["paper", "toy"] {
                out.push(format!("{}-{}-{s}", v.short_name(), d.as_str()));
            }
        }
    }
    out
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let unknown = || {
        Error::Config(format!(
            "unknown preset {name:?}; run `ninformer presets` for the list"
        ))
    };
    let parts: Vec<&str> = name.split('-').collect();
    let [v, d, s] = parts[..] else {
        return Err(unknown());
    };
    let variant: Variant = v.parse().map_err(|_| unknown())?;
    let dataset: DatasetName = d.parse().map_err(|_| unknown())?;
    let scale = match s {
        "paper" => Scale::Paper,
        "toy" => Scale::Toy,
        _ => return Err(unknown()),
    };
    Ok(preset_config(variant, dataset, scale))
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let s = self.dataset.image_size();
        if self.model.image_size != s || self.model.n_classes != self.dataset.n_classes() {
            return Err(Error::Config(format!(
                "model expects {}x{}x{} images and {} classes; {} has {}x{}x{} and {}",
                self.model.image_size.height,
                self.model.image_size.width,
                self.model.image_size.channels,
                self.model.n_classes,
                self.dataset,
                s.height,
                s.width,
                s.channels,
                self.dataset.n_classes()
            )));
        }
        Ok(())
    }

    /// Applies `key=value`. Keys are dotted paths (`model.d_model`,
    /// `train.epochs`); a bare key is looked up in `model`, then `train`, then
    /// the top level. Values are parsed as JSON, falling back to a string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
        let value: Value =
            serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut tree = serde_json::to_value(&*self)?;
        let path: Vec<String> = if key.contains('.') {
            key.split('.').map(str::to_string).collect()
        } else {
            let hit = ["model", "train"]
                .into_iter()
                .find(|s| tree[s].get(key).is_some())
                .map(|s| vec![s.to_string(), key.to_string()]);
            hit.unwrap_or_else(|| vec![key.to_string()])
        };
        let mut slot = &mut tree;
        for (i, part) in path.iter().enumerate() {
            let obj = slot.as_object_mut().ok_or_else(|| {
                Error::Config(format!("override key {key:?}: {part:?} is not a section"))
            })?;
            if i + 1 < path.len() && !obj.contains_key(part) {
                return Err(Error::Config(format!(
                    "override key {key:?}: no section {part:?}"
                )));
            }
            slot = obj.entry(part.clone()).or_insert(Value::Null);
        }
        *slot = value;
        *self = serde_json::from_value(tree)
            .map_err(|e| Error::Config(format!("override {spec:?}: {e}")))?;
        Ok(())
    }
}
