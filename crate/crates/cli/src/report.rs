//! JSON and CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;

use mmfuse::training::{EpochRecord, MetricsReport, Predictions};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Failed(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// Confusion counts and the seven metrics; undefined ratios are `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub auroc: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

impl From<&MetricsReport> for MetricsJson {
    fn from(m: &MetricsReport) -> Self {
        Self {
            n: m.count(),
            tp: m.tp,
            fp: m.fp,
            tn: m.tn,
            fn_: m.fn_,
            auroc: m.auroc,
            acc: m.acc,
            f1: m.f1,
            specificity: m.specificity,
            sensitivity: m.sensitivity,
            ppv: m.ppv,
            npv: m.npv,
        }
    }
}

/// Metrics of one checkpoint on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub epoch: usize,
    pub split: String,
    pub threshold: f64,
    pub metrics: MetricsJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochJson {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsJson,
}

impl From<&EpochRecord> for EpochJson {
    fn from(r: &EpochRecord) -> Self {
        Self { epoch: r.epoch, train_loss: r.train_loss, val: (&r.val).into() }
    }
}

pub const METRIC_COLUMNS: [&str; 7] = ["auroc", "acc", "f1", "specificity", "sensitivity", "ppv", "npv"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metric_cells(m: &MetricsReport) -> Vec<String> {
    m.named().iter().map(|(_, v)| opt(*v)).collect()
}

pub fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss");
    for c in METRIC_COLUMNS {
        let _ = write!(s, ",val_{c}");
    }
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, metric_cells(&r.val).join(","));
    }
    s
}

pub fn predictions_csv(p: &Predictions) -> String {
    let mut s = String::from("id,score,label\n");
    for ((id, score), label) in p.ids.iter().zip(&p.scores).zip(&p.labels) {
        let _ = writeln!(s, "{id},{score},{label}");
    }
    s
}

/// Parses a predictions CSV back into ids, scores and labels.
pub fn parse_predictions(text: &str) -> Result<Predictions, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some("id,score,label") {
        return Err(CliError::Failed("predictions CSV lacks the id,score,label header".into()));
    }
    let mut p = Predictions { ids: Vec::new(), scores: Vec::new(), labels: Vec::new() };
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Failed(format!("predictions CSV row {}: '{line}'", i + 1));
        if f.len() != 3 {
            return Err(bad());
        }
        p.ids.push(f[0].to_string());
        p.scores.push(f[1].parse().map_err(|_| bad())?);
        p.labels.push(f[2].parse().map_err(|_| bad())?);
    }
    Ok(p)
}
