//! CIFAR-10/100 binary version: fixed-size records of label byte(s) followed
//! by 3072 channel-planar pixels (1024 R, 1024 G, 1024 B, each row-major).

use std::path::Path;

use super::mnist::read_maybe_gz;
use super::{DatasetName, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PLANE: usize = 32 * 32;
/// Label byte + pixels.
pub const CIFAR10_RECORD: usize = 1 + 3 * PLANE;
/// Coarse label byte + fine label byte + pixels.
pub const CIFAR100_RECORD: usize = 2 + 3 * PLANE;

/// Appends the records of one file to `pixels` (interleaved `[32, 32, 3]`,
/// scaled to `[0, 1]`) and `labels`. CIFAR-100 uses the fine label.
pub fn parse_cifar_records(
    bytes: &[u8],
    path: &Path,
    which: usize,
    pixels: &mut Vec<f32>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let (record, label_at, n_classes) = match which {
        10 => (CIFAR10_RECORD, 0, 10),
        100 => (CIFAR100_RECORD, 1, 100),
        _ => {
            return Err(Error::Config(format!(
                "CIFAR variant must be 10 or 100, got {which}"
            )))
        }
    };
    if bytes.len() % record != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % record) as u64,
            msg: format!(
                "file length {} is not a multiple of the {record}-byte record",
                bytes.len()
            ),
        });
    }
    pixels.reserve(bytes.len() / record * 3 * PLANE);
    for (r, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_at] as usize;
        if label >= n_classes {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (r * record + label_at) as u64,
                msg: format!("label {label} out of range for {n_classes} classes"),
            });
        }
        labels.push(label);
        let planes = &rec[record - 3 * PLANE..];
        for p in 0..PLANE {
            for c in 0..3 {
                pixels.push(planes[c * PLANE + p] as f32 / 255.0);
            }
        }
    }
    Ok(())
}

/// Loads the extracted binary archive in `dir`.
pub fn load_cifar(dir: &Path, which: usize, split: Split) -> Result<LabeledDataset> {
    let (name, files): (DatasetName, Vec<String>) = match (which, split) {
        (10, Split::Train) => (
            DatasetName::Cifar10,
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        ),
        (10, Split::Test) => (DatasetName::Cifar10, vec!["test_batch.bin".into()]),
        (100, Split::Train) => (DatasetName::Cifar100, vec!["train.bin".into()]),
        (100, Split::Test) => (DatasetName::Cifar100, vec!["test.bin".into()]),
        _ => {
            return Err(Error::Config(format!(
                "CIFAR variant must be 10 or 100, got {which}"
            )))
        }
    };
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (bytes, path) = read_maybe_gz(&dir.join(f))?;
        parse_cifar_records(&bytes, &path, which, &mut pixels, &mut labels)?;
    }
    let images = Tensor::new([labels.len(), 32, 32, 3], pixels)?;
    LabeledDataset::new(name, split, images, labels)
}
