//! Fixture writers shared by the integration tests.
#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;

pub mod naive;

pub fn idx_images(images: &[[u8; 784]]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2051u32, images.len() as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        b.extend_from_slice(im);
    }
    b
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2049u32, labels.len() as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(labels);
    b
}

pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut e = GzEncoder::new(Vec::new(), Compression::fast());
    e.write_all(bytes).unwrap();
    e.finish().unwrap()
}

/// Deterministic image whose pixels depend on its label, so a model can
/// learn the mapping.
pub fn patterned_image(label: u8, variant: usize) -> [u8; 784] {
    let mut im = [0u8; 784];
    for (i, p) in im.iter_mut().enumerate() {
        let (r, c) = (i / 28, i % 28);
        let on = (r / 3 + c / 3 + label as usize) % 10 < 3;
        *p = if on {
            200
        } else {
            ((i * 7 + variant * 13) % 40) as u8
        };
    }
    im
}

/// Writes a small MNIST-layout directory `root/mnist` with `n_train` and
/// `n_test` patterned images over 10 classes.
pub fn write_mnist(root: &Path, n_train: usize, n_test: usize) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    for (prefix, n) in [("train", n_train), ("t10k", n_test)] {
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let images: Vec<[u8; 784]> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| patterned_image(l, i))
            .collect();
        fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            idx_images(&images),
        )
        .unwrap();
        fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            idx_labels(&labels),
        )
        .unwrap();
    }
}

/// One CIFAR record: label byte(s) then R, G, B planes.
pub fn cifar_record(labels: &[u8], r: u8, g: u8, b: u8) -> Vec<u8> {
    let mut rec = labels.to_vec();
    for v in [r, g, b] {
        rec.extend(std::iter::repeat(v).take(1024));
    }
    rec
}

pub fn data_root() -> std::path::PathBuf {
    ninformer::data::default_data_dir()
}
