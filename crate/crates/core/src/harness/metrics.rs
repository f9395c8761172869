use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// One row of the metrics stream. Times are cumulative simulated
/// milliseconds within the record's phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    /// `train`, `unlearn` or `retrain`.
    pub phase: String,
    pub round: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub mia_precision: f64,
    pub mia_recall: f64,
    pub time_lv: f64,
    pub time_lr: f64,
    pub time_commit: f64,
    pub time_seal: f64,
    pub time_train: f64,
    pub time_total: f64,
    pub lv_ops: u64,
    pub lr_ops: u64,
    /// L2 distance to the retrain-from-scratch reference, when one exists.
    pub deviation: Option<f64>,
    /// `accept`, `reject` or `none`.
    pub verification: String,
}

/// Writes `records` to `<path>` as CSV with a header row and to
/// `<path>.jsonl` (extension replaced) as one JSON object per line.
pub fn emit_metrics(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let path = path.as_ref();
    fs::write(path, to_csv(records)?)?;
    fs::write(path.with_extension("jsonl"), to_jsonl(records))?;
    Ok(())
}

pub fn to_csv(records: &[MetricsRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn to_jsonl(records: &[MetricsRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn read_csv(bytes: &[u8]) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    rdr.deserialize().map(|r| r.map_err(HarnessError::from)).collect()
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Io(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[MetricsRecord], mut out: W) -> Result<(), HarnessError> {
    out.write_all(&to_jsonl(records))?;
    Ok(())
}

const HEADER: [&str; 17] = [
    "scenario",
    "phase",
    "round",
    "accuracy",
    "loss",
    "mia_precision",
    "mia_recall",
    "time_lv",
    "time_lr",
    "time_commit",
    "time_seal",
    "time_train",
    "time_total",
    "lv_ops",
    "lr_ops",
    "deviation",
    "verification",
];
