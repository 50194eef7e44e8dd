mod common;

use std::fs;
use std::path::Path;

use common::*;
use ninformer::data::*;
use ninformer::Error;

fn fixture_images() -> [[u8; 784]; 2] {
    let mut a = [0u8; 784];
    let mut b = [0u8; 784];
    a[0] = 255;
    a[783] = 51;
    b[28] = 102; // row 1, col 0
    b[29] = 1;
    [a, b]
}

fn format_offset(e: Error) -> u64 {
    match e {
        Error::Format { offset, .. } => offset,
        other => panic!("expected a format error, got {other}"),
    }
}

#[test]
fn idx_two_records_parse_byte_for_byte() {
    let bytes = idx_images(&fixture_images());
    assert_eq!(bytes.len(), 16 + 2 * 784);
    let (n, px) = parse_idx_images(&bytes, Path::new("f")).unwrap();
    assert_eq!(n, 2);
    assert_eq!(
        (px[0], px[783], px[784 + 28], px[784 + 29]),
        (255, 51, 102, 1)
    );
    assert_eq!(
        parse_idx_labels(&idx_labels(&[7, 0]), Path::new("l"), 10).unwrap(),
        vec![7, 0]
    );
}

#[test]
fn idx_loader_scales_pixels_and_reads_gzip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("t10k-images-idx3-ubyte"),
        idx_images(&fixture_images()),
    )
    .unwrap();
    fs::write(
        dir.join("t10k-labels-idx1-ubyte.gz"),
        gzip(&idx_labels(&[3, 9])),
    )
    .unwrap();
    let ds = load_mnist(dir, Split::Test).unwrap();
    assert_eq!(ds.images.shape(), &[2, 28, 28, 1]);
    assert_eq!(ds.labels, vec![3, 9]);
    let d = ds.images.data();
    assert_eq!(d[0], 1.0);
    assert_eq!(d[783], 0.2);
    assert_eq!(d[784 + 28], 0.4);
    assert_eq!(d[784 + 29], 1.0 / 255.0);
}

#[test]
fn idx_corruption_reports_offsets() {
    let p = Path::new("f");
    let mut bytes = idx_images(&fixture_images());
    bytes[3] = 0x04;
    assert_eq!(format_offset(parse_idx_images(&bytes, p).unwrap_err()), 0);

    let bytes = idx_images(&fixture_images());
    let cut = &bytes[..16 + 784 + 100];
    assert_eq!(
        format_offset(parse_idx_images(cut, p).unwrap_err()),
        16 + 784
    );
    assert_eq!(
        format_offset(parse_idx_images(&bytes[..10], p).unwrap_err()),
        10
    );

    let mut long = bytes.clone();
    long.push(0);
    assert_eq!(
        format_offset(parse_idx_images(&long, p).unwrap_err()),
        16 + 2 * 784
    );

    let mut small = bytes.clone();
    small[11] = 27;
    assert_eq!(format_offset(parse_idx_images(&small, p).unwrap_err()), 8);

    assert_eq!(
        format_offset(parse_idx_labels(&idx_labels(&[1, 10]), p, 10).unwrap_err()),
        9
    );
    let short = &idx_labels(&[1, 2, 3])[..9];
    assert_eq!(
        format_offset(parse_idx_labels(short, p, 10).unwrap_err()),
        9
    );
}

#[test]
fn idx_count_mismatch_between_files() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("train-images-idx3-ubyte"),
        idx_images(&fixture_images()),
    )
    .unwrap();
    fs::write(tmp.path().join("train-labels-idx1-ubyte"), idx_labels(&[1])).unwrap();
    assert!(matches!(
        load_mnist(tmp.path(), Split::Train),
        Err(Error::Format { offset: 4, .. })
    ));
    let e = load_mnist(&tmp.path().join("missing"), Split::Train).unwrap_err();
    assert!(matches!(e, Error::Io { .. }), "{e}");
}

#[test]
fn cifar10_two_records_byte_for_byte() {
    let mut bytes = cifar_record(&[6], 10, 20, 30);
    let mut second = cifar_record(&[9], 0, 0, 0);
    second[1] = 255; // R of pixel (0, 0)
    second[1 + 1024 + 33] = 128; // G of pixel (1, 1)
    second[1 + 2048 + 1023] = 64; // B of pixel (31, 31)
    bytes.extend(second);
    assert_eq!(bytes.len(), 2 * CIFAR10_RECORD);

    let (mut px, mut labels) = (Vec::new(), Vec::new());
    parse_cifar_records(&bytes, Path::new("c"), 10, &mut px, &mut labels).unwrap();
    assert_eq!(labels, vec![6, 9]);
    assert_eq!(px.len(), 2 * 3072);
    assert_eq!(&px[..3], &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    let img1 = &px[3072..];
    assert_eq!(img1[0], 1.0);
    assert_eq!(img1[(32 + 1) * 3 + 1], 128.0 / 255.0);
    assert_eq!(img1[1023 * 3 + 2], 64.0 / 255.0);
    assert_eq!(img1.iter().filter(|&&v| v != 0.0).count(), 3);
}

#[test]
fn cifar100_uses_the_fine_label() {
    let mut bytes = cifar_record(&[3, 87], 1, 2, 3);
    bytes.extend(cifar_record(&[19, 99], 4, 5, 6));
    let (mut px, mut labels) = (Vec::new(), Vec::new());
    parse_cifar_records(&bytes, Path::new("c"), 100, &mut px, &mut labels).unwrap();
    assert_eq!(labels, vec![87, 99]);
    assert_eq!(&px[3072..3075], &[4.0 / 255.0, 5.0 / 255.0, 6.0 / 255.0]);
}

#[test]
fn cifar_corruption_reports_offsets() {
    let p = Path::new("c");
    let (mut px, mut labels) = (Vec::new(), Vec::new());
    let mut bytes = cifar_record(&[1], 0, 0, 0);
    bytes.extend(&cifar_record(&[2], 0, 0, 0)[..500]);
    let e = parse_cifar_records(&bytes, p, 10, &mut px, &mut labels).unwrap_err();
    assert_eq!(format_offset(e), CIFAR10_RECORD as u64);

    let mut bytes = cifar_record(&[1], 0, 0, 0);
    bytes.extend(cifar_record(&[10], 0, 0, 0));
    let e = parse_cifar_records(&bytes, p, 10, &mut px, &mut labels).unwrap_err();
    assert_eq!(format_offset(e), CIFAR10_RECORD as u64);

    let bad = cifar_record(&[0, 100], 0, 0, 0);
    let e = parse_cifar_records(&bad, p, 100, &mut px, &mut labels).unwrap_err();
    assert_eq!(format_offset(e), 1);
}

#[test]
fn cifar_directory_layouts() {
    let tmp = tempfile::tempdir().unwrap();
    let c10 = tmp.path().join(DatasetName::Cifar10.subdir());
    fs::create_dir_all(&c10).unwrap();
    for i in 1..=5u8 {
        fs::write(
            c10.join(format!("data_batch_{i}.bin")),
            cifar_record(&[i], i, 0, 0),
        )
        .unwrap();
    }
    fs::write(c10.join("test_batch.bin"), cifar_record(&[0], 0, 0, 0)).unwrap();
    let train = load_dataset(tmp.path(), DatasetName::Cifar10, Split::Train).unwrap();
    assert_eq!(train.labels, vec![1, 2, 3, 4, 5]);
    assert_eq!(train.images.shape(), &[5, 32, 32, 3]);
    assert_eq!(train.images.data()[3 * 3072], 4.0 / 255.0);

    let c100 = tmp.path().join(DatasetName::Cifar100.subdir());
    fs::create_dir_all(&c100).unwrap();
    fs::write(c100.join("train.bin"), cifar_record(&[1, 42], 0, 0, 0)).unwrap();
    fs::write(
        c100.join("test.bin.gz"),
        gzip(&cifar_record(&[1, 7], 0, 0, 0)),
    )
    .unwrap();
    let test = load_dataset(tmp.path(), DatasetName::Cifar100, Split::Test).unwrap();
    assert_eq!(test.labels, vec![7]);
    assert_eq!(test.n_classes(), 100);
}

#[test]
fn normalized_splits_share_training_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    write_mnist(tmp.path(), 30, 10);
    let (train, test) = load_normalized(tmp.path(), DatasetName::Mnist, Some(20)).unwrap();
    assert_eq!((train.len(), test.len()), (20, 10));
    let raw = load_dataset(tmp.path(), DatasetName::Mnist, Split::Train).unwrap();
    let stats = ChannelStats::of(&raw);
    let raw_test = load_dataset(tmp.path(), DatasetName::Mnist, Split::Test).unwrap();
    let want = (raw_test.images.data()[5] as f64 - stats.mean[0]) / stats.std[0];
    assert!((test.images.data()[5] as f64 - want).abs() < 1e-6);
}
