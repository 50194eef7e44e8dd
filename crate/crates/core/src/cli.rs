//! The `ninformer` command line: train, eval, bench, gradcheck and
//! export-curves.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error (including missing data and bad checkpoints), 3 numeric abort.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use crate::benchmark::{
    reports_csv, scaling_sweep, set_matmul_threads, time_inference, BenchReport,
};
use crate::data::{
    default_data_dir, load_dataset, load_normalized, normalize, ChannelStats, DatasetName, Split,
};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, DEFAULT_SEEDS};
use crate::models::{build_model, load_checkpoint, save_checkpoint, Model, Variant};
use crate::presets::{preset, preset_names, RunConfig};
use crate::tensor::{Scalar, TensorError};
use crate::training::{
    evaluate, read_metrics_csv, train, window_means, write_metrics_csv, write_metrics_jsonl,
    write_steps_csv, MetricsRecord, Precision,
};

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.json";

#[derive(Debug, Parser)]
#[command(
    name = "ninformer",
    version,
    about = "Train, evaluate and benchmark NiNformer and its baselines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write metrics, a checkpoint and the resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalArgs),
    /// Time per-sample inference for every variant, or sweep token counts.
    Bench(BenchArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Collect loss and accuracy curves from run directories into CSV.
    ExportCurves(ExportArgs),
    /// List preset names, or print one preset as JSON.
    Presets { name: Option<String> },
}

/// How the run configuration is chosen.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Named preset, e.g. ninformer-mnist-toy.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// JSON run config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one field, e.g. --set train.epochs=5 or --set d_model=128.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset root. Defaults to $NINFORMER_DATA_DIR, then ./data.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory. Defaults to runs/<preset or config name>.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to evaluate on. Defaults to the one matching the model's input shape.
    #[arg(long)]
    pub dataset: Option<DatasetName>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Directory for eval.json. Defaults to the checkpoint's directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    #[arg(long, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Shapes and widths to benchmark; the variant is replaced by each of --variants.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated variants.
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
    pub variants: Vec<Variant>,
    /// Batch for the amortized measurement; batch 1 is always measured too.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// Time a token-count sweep on synthetic inputs instead.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 64, 256, 1024])]
    pub tokens: Vec<usize>,
    /// Batch used by the sweep.
    #[arg(long, default_value_t = 1)]
    pub sweep_batch: usize,
    #[arg(long, default_value = "runs/bench")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    pub seeds: u64,
    /// Also write gradcheck.json here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Add a component with a deliberately wrong backward.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Training output directories.
    #[arg(long = "run-dir", required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Steps per smoothing window.
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    /// Defaults to the first run directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteLoss { .. } | Error::Tensor(TensorError::NonFinite { .. }) => {
                EXIT_NUMERIC
            }
            _ => EXIT_USAGE,
        };
        let mut message = e.to_string();
        if let Error::Io { source, .. } = &e {
            if source.kind() == std::io::ErrorKind::NotFound {
                message.push_str(
                    "\nhint: fetch the data with scripts/fetch_mnist.sh (or fetch_cifar.sh), or point \
                     --data-dir / NINFORMER_DATA_DIR at it",
                );
            }
        }
        Failure { code, message }
    }
}

fn usage_error(message: impl Into<String>) -> Failure {
    let mut message = message.into();
    message.push('\n');
    message.push_str(&Cli::command().render_usage().to_string());
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, S>(args: I) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportCurves(a) => cmd_export_curves(a),
        Command::Presets { name } => cmd_presets(name),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Resolves preset or file, then overrides, seed and precision. Returns the
/// config and a name for default output paths.
pub fn resolve_config(
    a: &ConfigArgs,
    fallback: Option<&str>,
) -> std::result::Result<(RunConfig, String), Failure> {
    let (mut rc, name) = match (&a.preset, &a.config) {
        (Some(p), _) => {
            let rc = preset(p).map_err(|e| usage_error(e.to_string()))?;
            (rc, p.clone())
        }
        (None, Some(path)) => {
            let stem = path
                .file_stem()
                .map_or("run".into(), |s| s.to_string_lossy().into_owned());
            (RunConfig::from_json_file(path)?, stem)
        }
        (None, None) => match fallback {
            Some(p) => (preset(p)?, p.to_string()),
            None => return Err(usage_error("one of --preset or --config is required")),
        },
    };
    for o in &a.overrides {
        rc.apply_override(o)?;
    }
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(p) = a.precision {
        rc.train.precision = p;
    }
    rc.validate()?;
    Ok((rc, name))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    set_matmul_threads(a.threads);
    let (rc, name) = resolve_config(&a.config, None)?;
    let out = a.out_dir.unwrap_or_else(|| Path::new("runs").join(&name));
    let data_dir = a.data_dir.unwrap_or_else(default_data_dir);
    create_dir(&out)?;
    write_json(&out.join(RESOLVED_CONFIG_FILE), &rc)?;
    eprintln!(
        "training {} on {} ({} precision) -> {}",
        rc.model.variant,
        rc.dataset,
        rc.train.precision,
        out.display()
    );
    match rc.train.precision {
        Precision::F32 => train_run::<f32>(&rc, &data_dir, &out),
        Precision::F64 => train_run::<f64>(&rc, &data_dir, &out),
    }
}

fn train_run<T: Scalar>(rc: &RunConfig, data_dir: &Path, out: &Path) -> CmdResult {
    let (train_ds, test_ds) = load_normalized(data_dir, rc.dataset, rc.train_subset)?;
    let mut model: Model<T> = build_model(&rc.model, rc.train.seed)?;
    eprintln!(
        "{} train / {} test images, {} parameters",
        train_ds.len(),
        test_ds.len(),
        model.num_params()
    );
    out!("{}", MetricsRecord::CSV_HEADER);
    // Rewritten after every epoch so an aborted run keeps its history.
    let mut records: Vec<MetricsRecord> = Vec::new();
    let mut write_err = None;
    let result = train(&mut model, &train_ds, &test_ds, &rc.train, |r| {
        out!("{}", r.csv_row());
        records.push(r.clone());
        if let Err(e) = write_metrics_csv(&out.join("metrics.csv"), &records)
            .and_then(|_| write_metrics_jsonl(&out.join("metrics.jsonl"), &records))
        {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let report = result?;
    write_steps_csv(&out.join("steps.csv"), &report.steps)?;
    save_checkpoint(&model, out.join(CHECKPOINT_FILE))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Result file of `eval`.
#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub dataset: DatasetName,
    pub split: Split,
    pub checkpoint: PathBuf,
    pub variant: Variant,
    pub loss: f64,
    pub accuracy: f64,
    pub n_samples: usize,
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    set_matmul_threads(a.threads);
    match a.precision {
        Precision::F32 => eval_run::<f32>(&a),
        Precision::F64 => eval_run::<f64>(&a),
    }
}

fn eval_run<T: Scalar>(a: &EvalArgs) -> CmdResult {
    let model: Model<T> = load_checkpoint(&a.checkpoint)?;
    let dataset = match a.dataset.or_else(|| DatasetName::matching(&model.config)) {
        Some(d) => d,
        None => {
            return Err(usage_error(
                "no dataset matches the checkpoint's input shape; pass --dataset",
            ))
        }
    };
    let expect = dataset.image_size();
    if model.config.image_size != expect || model.config.n_classes != dataset.n_classes() {
        return Err(Error::Checkpoint(format!(
            "checkpoint does not fit {dataset} images and classes"
        ))
        .into());
    }
    let data_dir = a.data_dir.clone().unwrap_or_else(default_data_dir);
    // Same scaling as training: statistics of the full training split.
    let stats = ChannelStats::of(&load_dataset(&data_dir, dataset, Split::Train)?);
    let test = normalize(load_dataset(&data_dir, dataset, Split::Test)?, &stats)?;
    let r = evaluate(&model, &test, a.batch_size)?;
    let out = EvalOutput {
        dataset,
        split: Split::Test,
        checkpoint: a.checkpoint.clone(),
        variant: model.config.variant,
        loss: r.loss,
        accuracy: r.accuracy,
        n_samples: r.n_samples,
    };
    out!(
        "test_loss={} test_acc={} n={}",
        r.loss,
        r.accuracy,
        r.n_samples
    );
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a
            .checkpoint
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    create_dir(&dir)?;
    write_json(&dir.join("eval.json"), &out)?;
    Ok(())
}

/// Contents of `bench.json`.
#[derive(Debug, Serialize)]
pub struct BenchOutput {
    pub threads: usize,
    pub per_sample: Vec<BenchReport>,
    pub amortized: Vec<BenchReport>,
    pub sweep: Vec<BenchReport>,
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    set_matmul_threads(a.threads);
    let (rc, _) = resolve_config(&a.config, Some("ninformer-cifar10-paper"))?;
    create_dir(&a.out_dir)?;
    let mut out = BenchOutput {
        threads: a.threads,
        per_sample: Vec::new(),
        amortized: Vec::new(),
        sweep: Vec::new(),
    };
    let show = |r: &BenchReport| {
        eprintln!(
            "{:>10} n={:<5} batch={:<4} median {:>12.1} ns/sample  iqr {:>10.1}",
            r.variant.to_string(),
            r.n_tokens,
            r.batch_size,
            r.median_ns,
            r.iqr_ns
        )
    };
    if a.sweep {
        out.sweep = scaling_sweep(
            &rc.model,
            &a.variants,
            &a.tokens,
            a.sweep_batch,
            a.warmup,
            a.iters,
            rc.train.seed,
        )?;
        out.sweep.iter().for_each(show);
        write_file(&a.out_dir.join("sweep.csv"), reports_csv(&out.sweep))?;
    } else {
        for &v in &a.variants {
            let mut cfg = rc.model.clone();
            cfg.variant = v;
            cfg.use_positional_embedding = v.uses_attention();
            let model = build_model::<f32>(&cfg, rc.train.seed)?;
            let one = time_inference(&model, 1, a.warmup, a.iters, "batch-1")?;
            show(&one);
            out.per_sample.push(one);
            let many = time_inference(&model, a.batch_size, a.warmup, a.iters, "amortized")?;
            show(&many);
            out.amortized.push(many);
        }
        write_file(&a.out_dir.join("bench.csv"), reports_csv(&out.per_sample))?;
        write_file(
            &a.out_dir.join("bench_amortized.csv"),
            reports_csv(&out.amortized),
        )?;
    }
    write_json(&a.out_dir.join("bench.json"), &out)?;
    out!("threads={} wrote {}", a.threads, a.out_dir.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    set_matmul_threads(a.threads);
    if a.seeds == 0 {
        return Err(usage_error("--seeds must be positive"));
    }
    out!(
        "{:<18} {:>8} {:>12}  worst entry",
        "component",
        "entries",
        "max_rel_err"
    );
    let report = run_suite(a.seeds, a.inject_fault, |c| {
        out!(
            "{:<18} {:>8} {:>12.3e}  {}{}",
            c.component,
            c.entries_checked,
            c.max_rel_error,
            c.worst,
            if c.passed { "" } else { "  FAIL" }
        );
    })?;
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    if report.passed() {
        out!(
            "all {} components below {:e}",
            report.components.len(),
            report.tolerance
        );
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!(
                "gradient check failed for: {}",
                report.failures().join(", ")
            ),
        })
    }
}

fn read_step_losses(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = |line: usize| Error::Config(format!("{}: malformed line {line}", path.display()));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            match (
                f.first().and_then(|s| s.parse().ok()),
                f.get(3).and_then(|s| s.parse().ok()),
            ) {
                (Some(step), Some(loss)) if f.len() == 4 => Ok((step, loss)),
                _ => Err(bad(i + 1)),
            }
        })
        .collect()
}

fn cmd_export_curves(a: ExportArgs) -> CmdResult {
    if a.window == 0 {
        return Err(usage_error("--window must be positive"));
    }
    let mut loss = String::from("run,window,end_step,mean_loss\n");
    let mut epochs = format!("run,{}\n", MetricsRecord::CSV_HEADER);
    for dir in &a.run_dirs {
        let run = dir.file_name().map_or_else(
            || dir.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        );
        let steps = read_step_losses(&dir.join("steps.csv"))?;
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        for (w, m) in window_means(&values, a.window).into_iter().enumerate() {
            loss.push_str(&format!(
                "{run},{w},{},{m}\n",
                steps[(w + 1) * a.window - 1].0
            ));
        }
        for r in read_metrics_csv(&dir.join("metrics.csv"))? {
            epochs.push_str(&format!("{run},{}\n", r.csv_row()));
        }
    }
    let out = a.out_dir.unwrap_or_else(|| a.run_dirs[0].clone());
    create_dir(&out)?;
    write_file(&out.join("loss_curve.csv"), loss)?;
    write_file(&out.join("epoch_curve.csv"), epochs)?;
    out!(
        "wrote {} and {}",
        out.join("loss_curve.csv").display(),
        out.join("epoch_curve.csv").display()
    );
    Ok(())
}

fn cmd_presets(name: Option<String>) -> CmdResult {
    match name {
        None => preset_names().iter().for_each(|n| out!("{n}")),
        Some(n) => {
            let rc = preset(&n).map_err(|e| usage_error(e.to_string()))?;
            out!(
                "{}",
                serde_json::to_string_pretty(&rc).map_err(Error::from)?
            );
        }
    }
    Ok(())
}
