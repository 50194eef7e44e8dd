//! Per-sample inference timing and the analytic FLOP model.

mod flops;

pub use flops::{block_flops, count_flops, BlockFlops, FlopModel};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{build_model, ImageSize, Model, ModelConfig, Variant};
use crate::tensor::{Graph, Scalar, Tensor};

/// Threads the GEMM backend will use: `MATMUL_NUM_THREADS` if set, else
/// the machine's parallelism.
pub fn matmul_threads() -> usize {
    std::env::var("MATMUL_NUM_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Pins the GEMM thread count. Only effective before the first matrix
/// product of the process.
pub fn set_matmul_threads(n: usize) {
    std::env::set_var("MATMUL_NUM_THREADS", n.max(1).to_string());
}

/// Timing statistics of one model at one input shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: Variant,
    pub label: String,
    pub input_shape: Vec<usize>,
    pub n_tokens: usize,
    pub batch_size: usize,
    pub threads: usize,
    pub warmup_iters: usize,
    pub measured_iters: usize,
    pub median_ns: f64,
    pub q1_ns: f64,
    pub q3_ns: f64,
    pub iqr_ns: f64,
    pub flops_per_sample: u64,
    /// Per-sample nanoseconds of every measured iteration, in run order.
    pub samples_ns: Vec<f64>,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const MIN_WARMUP: usize = 5;
pub const MIN_ITERS: usize = 30;

/// Gaussian images for timing; kernels here are value-independent.
pub fn synthetic_images<T: Scalar>(batch: usize, size: ImageSize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..batch * size.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(z)
        })
        .collect();
    Tensor::new([batch, size.height, size.width, size.channels], data).expect("length matches")
}

/// Times `iters` tape-free forward passes after `warmup` untimed ones.
/// Parameter binding happens before the clock starts.
pub fn time_inference<T: Scalar>(
    model: &Model<T>,
    batch_size: usize,
    warmup: usize,
    iters: usize,
    label: &str,
) -> Result<BenchReport> {
    if warmup < MIN_WARMUP || iters < MIN_ITERS || batch_size == 0 {
        return Err(Error::Config(format!(
            "benchmark needs warmup >= {MIN_WARMUP}, iters >= {MIN_ITERS} and a positive batch \
             (got {warmup}, {iters}, {batch_size})"
        )));
    }
    let cfg = &model.config;
    let images = synthetic_images::<T>(batch_size, cfg.image_size, 0x5eed);
    let mut samples = Vec::with_capacity(iters);
    for i in 0..warmup + iters {
        let g = Graph::inference();
        let p = model.bind(&g)?;
        let x = g.constant(images.clone());
        let t0 = Instant::now();
        let logits = model.forward_classify(&p, x)?;
        let ns = t0.elapsed().as_nanos() as f64;
        std::hint::black_box(&logits);
        if i >= warmup {
            samples.push(ns / batch_size as f64);
        }
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.5),
        quantile(&sorted, 0.75),
    );
    Ok(BenchReport {
        variant: cfg.variant,
        label: label.to_string(),
        input_shape: images.shape().to_vec(),
        n_tokens: cfg.n_tokens(),
        batch_size,
        threads: matmul_threads(),
        warmup_iters: warmup,
        measured_iters: iters,
        median_ns: median,
        q1_ns: q1,
        q3_ns: q3,
        iqr_ns: q3 - q1,
        flops_per_sample: count_flops(cfg).total(),
        samples_ns: samples,
    })
}

/// Header of bench and sweep CSVs.
pub const BENCH_CSV_HEADER: &str = "variant,n_tokens,flops,median_ns,iqr_ns";

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.1},{:.1}",
            self.variant, self.n_tokens, self.flops_per_sample, self.median_ns, self.iqr_ns
        )
    }
}

pub fn reports_csv(reports: &[BenchReport]) -> String {
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// `base` with its image reshaped so the patch grid holds `n` tokens:
/// the grid is `2^⌈k/2⌉ × 2^⌊k/2⌋` patches for `n = 2^k`, else `1 × n`.
pub fn config_with_tokens(base: &ModelConfig, n: usize) -> ModelConfig {
    let (gh, gw) = if n.is_power_of_two() {
        let k = n.trailing_zeros();
        (1usize << k.div_ceil(2), 1usize << (k / 2))
    } else {
        (1, n)
    };
    let ps = base.patch_size;
    let mut cfg = base.clone();
    cfg.image_size = ImageSize::new(gh * ps, gw * ps, base.image_size.channels);
    cfg
}

/// One timed run per `(variant, n)` on synthetic inputs at the widths of
/// `base`.
pub fn scaling_sweep(
    base: &ModelConfig,
    variants: &[Variant],
    n_tokens: &[usize],
    batch_size: usize,
    warmup: usize,
    iters: usize,
    seed: u64,
) -> Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for &v in variants {
        for &n in n_tokens {
            let mut cfg = config_with_tokens(base, n);
            cfg.variant = v;
            cfg.use_positional_embedding = v.uses_attention();
            let model = build_model::<f32>(&cfg, seed)?;
            out.push(time_inference(
                &model,
                batch_size,
                warmup,
                iters,
                &format!("sweep-n{n}"),
            )?);
        }
    }
    Ok(out)
}
