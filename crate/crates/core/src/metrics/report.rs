use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ttest::{paired_t_test, TTest};

pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.csv";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("reports cover different sample sets: {0}")]
    SampleSetMismatch(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Score for one evaluated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: usize,
    pub valid: bool,
    pub r2: f64,
    #[serde(rename = "acc_0.1")]
    pub acc_01: bool,
    #[serde(rename = "acc_0.01")]
    pub acc_001: bool,
    #[serde(rename = "acc_0.001")]
    pub acc_0001: bool,
    /// Fit error; absent when the generation could not be fitted.
    pub sse: Option<f64>,
    pub generated_expr: String,
}

impl SampleScore {
    /// Score for a generation that could not be fitted.
    pub fn failed(sample_id: usize, generated_expr: String) -> Self {
        Self {
            sample_id,
            valid: false,
            r2: 0.0,
            acc_01: false,
            acc_001: false,
            acc_0001: false,
            sse: None,
            generated_expr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n_samples: usize,
    pub mean_r2: f64,
    #[serde(rename = "mean_acc_0.1")]
    pub mean_acc_01: f64,
    #[serde(rename = "mean_acc_0.01")]
    pub mean_acc_001: f64,
    #[serde(rename = "mean_acc_0.001")]
    pub mean_acc_0001: f64,
    pub valid_rpn_rate: f64,
}

impl Aggregates {
    /// Means over all samples; invalid generations count as r2 = 0, acc = false.
    pub fn from_scores(scores: &[SampleScore]) -> Self {
        let n = scores.len();
        let mean = |f: &dyn Fn(&SampleScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                scores.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        Self {
            n_samples: n,
            mean_r2: mean(&|s| s.r2),
            mean_acc_01: mean(&|s| flag(s.acc_01)),
            mean_acc_001: mean(&|s| flag(s.acc_001)),
            mean_acc_0001: mean(&|s| flag(s.acc_0001)),
            valid_rpn_rate: mean(&|s| flag(s.valid)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub mode: String,
    pub split: String,
    pub aggregates: Aggregates,
    pub samples: Vec<SampleScore>,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, mode: impl Into<String>, split: impl Into<String>, samples: Vec<SampleScore>) -> Self {
        Self {
            model: model.into(),
            mode: mode.into(),
            split: split.into(),
            aggregates: Aggregates::from_scores(&samples),
            samples,
        }
    }

    /// Writes `report.json` and `samples.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let json_path = dir.join(REPORT_FILE);
        let json = serde_json::to_string_pretty(self).map_err(|e| io_err(&json_path, e))? + "\n";
        fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
        let csv_path = dir.join(SAMPLES_FILE);
        write_samples_csv(&csv_path, &self.samples)
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}

pub fn write_samples_csv(path: &Path, samples: &[SampleScore]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for s in samples {
        w.serialize(s).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<SampleScore>, ReportError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<Result<Vec<SampleScore>, _>>().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Side-by-side aggregates plus a paired t-test on per-sample R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub n_samples: usize,
    pub rows: Vec<ComparisonRow>,
    pub r2_t_test: TTest,
    pub p_value: String,
}

/// Requires both reports to cover the same sample ids in the same order.
pub fn compare_models(a: &EvalReport, b: &EvalReport) -> Result<Comparison, ReportError> {
    if a.samples.len() != b.samples.len() {
        return Err(ReportError::SampleSetMismatch(format!("{} vs {} samples", a.samples.len(), b.samples.len())));
    }
    if let Some((x, y)) = a.samples.iter().zip(&b.samples).find(|(x, y)| x.sample_id != y.sample_id) {
        return Err(ReportError::SampleSetMismatch(format!("sample id {} paired with {}", x.sample_id, y.sample_id)));
    }
    let (ga, gb) = (&a.aggregates, &b.aggregates);
    let row = |metric: &str, x: f64, y: f64| ComparisonRow { metric: metric.to_string(), a: x, b: y, delta: x - y };
    let rows = vec![
        row("Mean R2 Score", ga.mean_r2, gb.mean_r2),
        row("Mean Acc_0.1", ga.mean_acc_01, gb.mean_acc_01),
        row("Mean Acc_0.01", ga.mean_acc_001, gb.mean_acc_001),
        row("Mean Acc_0.001", ga.mean_acc_0001, gb.mean_acc_0001),
        row("% Valid RPNs", ga.valid_rpn_rate, gb.valid_rpn_rate),
    ];
    let ra: Vec<f64> = a.samples.iter().map(|s| s.r2).collect();
    let rb: Vec<f64> = b.samples.iter().map(|s| s.r2).collect();
    let r2_t_test = if ra.len() >= 2 {
        paired_t_test(&ra, &rb).expect("lengths checked")
    } else {
        TTest { t: 0.0, p: 1.0, df: 0, mean_difference: 0.0, degenerate: true }
    };
    Ok(Comparison {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        n_samples: ra.len(),
        rows,
        r2_t_test,
        p_value: "two-sided paired t-test on per-sample R2".into(),
    })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let wa = self.model_a.len().max(8);
        let wb = self.model_b.len().max(8);
        writeln!(out, "{:<16} {:>wa$} {:>wb$} {:>9}", "Metric", self.model_a, self.model_b, "Delta").unwrap();
        for r in &self.rows {
            writeln!(out, "{:<16} {:>wa$.3} {:>wb$.3} {:>+9.3}", r.metric, r.a, r.b, r.delta).unwrap();
        }
        let tt = &self.r2_t_test;
        writeln!(out, "samples: {}; paired t-test on R2: t = {:.4}, df = {}, p = {:.4} (two-sided)", self.n_samples, tt.t, tt.df, tt.p)
            .unwrap();
        out
    }
}
