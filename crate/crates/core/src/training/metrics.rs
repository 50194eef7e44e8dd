use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Seconds since training started, measured at the end of the epoch.
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,train_acc,test_loss,test_acc,wall_time_s";

    /// Floats use the shortest representation that round-trips.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.test_loss,
            self.test_acc,
            self.wall_time_s
        )
    }
}

/// Per-optimizer-step training loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

fn write(path: &Path, body: String) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut s = String::from(MetricsRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    write(path, s)
}

pub fn write_metrics_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write(path, s)
}

pub fn write_steps_csv(path: &Path, steps: &[StepRecord]) -> Result<()> {
    let mut s = String::from("step,epoch,batch,loss\n");
    for r in steps {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.epoch, r.batch, r.loss));
    }
    write(path, s)
}

/// Parses a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: &str| Error::Format {
        path: path.to_path_buf(),
        offset: line as u64,
        msg: format!("line {}: {msg}", line + 1),
    };
    if lines.next() != Some(MetricsRecord::CSV_HEADER) {
        return Err(bad(0, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i + 1, "expected 6 fields"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            Ok(MetricsRecord {
                epoch: f[0].parse().map_err(|_| bad(i + 1, "bad epoch"))?,
                train_loss: num(1)?,
                train_acc: num(2)?,
                test_loss: num(3)?,
                test_acc: num(4)?,
                wall_time_s: num(5)?,
            })
        })
        .collect()
}

/// Means of consecutive non-overlapping windows; a trailing partial window
/// is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}
