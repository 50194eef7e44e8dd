//! Big-endian IDX files as distributed for MNIST (optionally gzipped).

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{DatasetName, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;
const SIDE: usize = 28;

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path, what: &str) -> Result<usize> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize),
        None => Err(format_err(
            path,
            bytes.len(),
            format!("truncated header, missing {what}"),
        )),
    }
}

/// Reads `path`, or `path.gz` if only the compressed file exists.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<(Vec<u8>, PathBuf)> {
    if path.exists() {
        return Ok((
            fs::read(path).map_err(|e| Error::io(path, e))?,
            path.to_path_buf(),
        ));
    }
    let mut gz = path.as_os_str().to_owned();
    gz.push(".gz");
    let gz = PathBuf::from(gz);
    if !gz.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "file not found (also tried .gz)",
            ),
        ));
    }
    let raw = fs::read(&gz).map_err(|e| Error::io(&gz, e))?;
    let mut out = Vec::new();
    GzDecoder::new(&raw[..])
        .read_to_end(&mut out)
        .map_err(|e| Error::io(&gz, e))?;
    Ok((out, gz))
}

/// Parses an image file into `(count, pixels)` with one byte per pixel.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, &'a [u8])> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IDX_IMAGE_MAGIC as usize {
        return Err(format_err(
            path,
            0,
            format!("image magic {magic}, expected {IDX_IMAGE_MAGIC}"),
        ));
    }
    let n = be_u32(bytes, 4, path, "image count")?;
    let rows = be_u32(bytes, 8, path, "row count")?;
    let cols = be_u32(bytes, 12, path, "column count")?;
    if rows != SIDE || cols != SIDE {
        return Err(format_err(
            path,
            8,
            format!("images are {rows}x{cols}, expected 28x28"),
        ));
    }
    let body = &bytes[16..];
    let per = SIDE * SIDE;
    if body.len() < n * per {
        let whole = body.len() / per;
        return Err(format_err(
            path,
            16 + whole * per,
            format!("truncated inside image {whole} of {n}"),
        ));
    }
    if body.len() > n * per {
        return Err(format_err(
            path,
            16 + n * per,
            "trailing bytes after last image",
        ));
    }
    Ok((n, body))
}

/// Parses a label file; every label must be below `n_classes`.
pub fn parse_idx_labels(bytes: &[u8], path: &Path, n_classes: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path, "magic")?;
    if magic != IDX_LABEL_MAGIC as usize {
        return Err(format_err(
            path,
            0,
            format!("label magic {magic}, expected {IDX_LABEL_MAGIC}"),
        ));
    }
    let n = be_u32(bytes, 4, path, "label count")?;
    let body = &bytes[8..];
    if body.len() != n {
        let at = 8 + body.len().min(n);
        return Err(format_err(
            path,
            at,
            format!("header declares {n} labels, file holds {}", body.len()),
        ));
    }
    body.iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < n_classes {
                Ok(l as usize)
            } else {
                Err(format_err(path, 8 + i, format!("label {l} out of range")))
            }
        })
        .collect()
}

/// Loads `train-*` or `t10k-*` IDX files from `dir`.
pub fn load_mnist(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let (img_bytes, img_path) = read_maybe_gz(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let (lbl_bytes, lbl_path) = read_maybe_gz(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    let (n, pixels) = parse_idx_images(&img_bytes, &img_path)?;
    let labels = parse_idx_labels(&lbl_bytes, &lbl_path, 10)?;
    if labels.len() != n {
        return Err(format_err(
            &lbl_path,
            4,
            format!(
                "{} labels for {n} images in {}",
                labels.len(),
                img_path.display()
            ),
        ));
    }
    let data = pixels.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Tensor::new([n, SIDE, SIDE, 1], data)?;
    LabeledDataset::new(DatasetName::Mnist, split, images, labels)
}
