//! MNIST and CIFAR ingestion, per-channel standardization, and seeded batching.
//!
//! Loaders read the canonical binary distributions from a local directory and
//! never touch the network. Images are stored as `[N, h, w, c]` in `[0, 1]`.

mod cifar;
mod mnist;

pub use cifar::{load_cifar, parse_cifar_records, CIFAR100_RECORD, CIFAR10_RECORD};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ImageSize, ModelConfig};
use crate::tensor::{Scalar, Tensor};

/// Environment variable overriding the dataset root.
pub const DATA_DIR_ENV: &str = "NINFORMER_DATA_DIR";

/// `$NINFORMER_DATA_DIR`, else the `data/` directory at the workspace root.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [
        DatasetName::Mnist,
        DatasetName::Cifar10,
        DatasetName::Cifar100,
    ];

    /// The dataset whose image shape and class count match `cfg`.
    pub fn matching(cfg: &ModelConfig) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.image_size() == cfg.image_size && d.n_classes() == cfg.n_classes)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
        }
    }

    pub fn image_size(self) -> ImageSize {
        match self {
            DatasetName::Mnist => ImageSize::new(28, 28, 1),
            DatasetName::Cifar10 | DatasetName::Cifar100 => ImageSize::new(32, 32, 3),
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            DatasetName::Mnist | DatasetName::Cifar10 => 10,
            DatasetName::Cifar100 => 100,
        }
    }

    /// Canonical sample count of a split.
    pub fn split_len(self, split: Split) -> usize {
        match (self, split) {
            (DatasetName::Mnist, Split::Train) => 60_000,
            (_, Split::Train) => 50_000,
            (_, Split::Test) => 10_000,
        }
    }

    /// Directory under the data root holding the extracted distribution.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar-10-batches-bin",
            DatasetName::Cifar100 => "cifar-100-binary",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "cifar10" => Ok(DatasetName::Cifar10),
            "cifar100" => Ok(DatasetName::Cifar100),
            _ => Err(Error::Config(format!("unknown dataset {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Decoded images with integer labels.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub name: DatasetName,
    pub split: Split,
    /// `[N, h, w, c]`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        name: DatasetName,
        split: Split,
        images: Tensor<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let s = name.image_size();
        let want = [labels.len(), s.height, s.width, s.channels];
        if images.shape() != want {
            return Err(Error::Config(format!(
                "{name} {split}: images {:?} do not match {want:?}",
                images.shape()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= name.n_classes()) {
            return Err(Error::Config(format!(
                "{name} {split}: label {bad} out of range"
            )));
        }
        Ok(Self {
            name,
            split,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.name.n_classes()
    }

    fn sample_len(&self) -> usize {
        self.name.image_size().numel()
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn subset(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        let data = self.images.data()[..n * self.sample_len()].to_vec();
        Self {
            name: self.name,
            split: self.split,
            images: Tensor::new(shape, data).expect("prefix of a valid tensor"),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Stacks the given samples into a batch, converting to `T`.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let len = self.sample_len();
        let src = self.images.data();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend(
                src[i * len..(i + 1) * len]
                    .iter()
                    .map(|&v| T::from_f64(v as f64)),
            );
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::new(shape, data).expect("gathered length matches"),
            labels,
        )
    }
}

/// Loads one split of a dataset from `root/<subdir>`.
pub fn load_dataset(root: &Path, name: DatasetName, split: Split) -> Result<LabeledDataset> {
    let dir = root.join(name.subdir());
    match name {
        DatasetName::Mnist => load_mnist(&dir, split),
        DatasetName::Cifar10 => load_cifar(&dir, 10, split),
        DatasetName::Cifar100 => load_cifar(&dir, 100, split),
    }
}

/// Train split (truncated to its first `train_subset` images when given)
/// and test split, both normalized with the statistics of the full training
/// split so that every run on a dataset sees the same input scaling.
pub fn load_normalized(
    root: &Path,
    name: DatasetName,
    train_subset: Option<usize>,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let train = load_dataset(root, name, Split::Train)?;
    let stats = ChannelStats::of(&train);
    let train = match train_subset {
        Some(n) => train.subset(n),
        None => train,
    };
    let test = load_dataset(root, name, Split::Test)?;
    Ok((normalize(train, &stats)?, normalize(test, &stats)?))
}

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics of `ds`, accumulated in 64-bit.
    pub fn of(ds: &LabeledDataset) -> Self {
        let c = ds.name.image_size().channels;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for px in ds.images.data().chunks_exact(c) {
            for (k, &v) in px.iter().enumerate() {
                sum[k] += v as f64;
                sq[k] += (v as f64) * (v as f64);
            }
        }
        let count = (ds.images.numel() / c).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / count - m * m).max(0.0).sqrt())
            .collect();
        Self { mean, std }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::Config(format!(
                "normalization expects {channels} channels, got {} means and {} stds",
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(s) = self.std.iter().find(|s| s.is_nan() || **s <= 0.0) {
            return Err(Error::Config(format!(
                "normalization std must be positive, got {s}"
            )));
        }
        Ok(())
    }
}

fn map_channels(
    mut ds: LabeledDataset,
    stats: &ChannelStats,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<LabeledDataset> {
    let c = ds.name.image_size().channels;
    stats.check(c)?;
    for px in ds.images.data_mut().chunks_exact_mut(c) {
        for (k, v) in px.iter_mut().enumerate() {
            *v = f(*v as f64, stats.mean[k], stats.std[k]) as f32;
        }
    }
    Ok(ds)
}

/// `(x - mean) / std` per channel.
pub fn normalize(ds: LabeledDataset, stats: &ChannelStats) -> Result<LabeledDataset> {
    map_channels(ds, stats, |x, m, s| (x - m) / s)
}

/// Inverse of [`normalize`].
pub fn denormalize(ds: LabeledDataset, stats: &ChannelStats) -> Result<LabeledDataset> {
    map_channels(ds, stats, |x, m, s| x * s + m)
}

/// Yields index batches covering `0..n` exactly once per epoch. The final
/// short batch is kept.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl BatchIterator {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}

/// Batches over `n` samples. With `shuffle` the permutation is drawn from
/// ChaCha8 seeded by `seed` on stream `epoch`, so every epoch differs but
/// reruns repeat exactly.
pub fn batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<BatchIterator> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    Ok(BatchIterator {
        order,
        batch_size,
        cursor: 0,
    })
}
