//! Synthetic bivariate corpus: random expression trees, sampled points,
//! JSON-lines persistence and batched loading.

mod generate;
mod loader;
mod record;
mod tree;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{build_dataset, generate_record, sample_points, DatasetManifest, SplitCounts};
pub use loader::{Batch, DatasetSplit};
pub use record::{check_record, SampleRecord};
pub use tree::{sample_expression, Expr, SampledExpression};

use crate::vocab::MAX_SEQ_LEN;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VALIDATE_FILE: &str = "validate.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("{path}: vocabulary does not match the expected vocabulary")]
    VocabularyMismatch { path: PathBuf },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("sample discarded: no finite points within the rejection budget")]
    SampleDiscarded,
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validate,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => TRAIN_FILE,
            Split::Test => TEST_FILE,
            Split::Validate => VALIDATE_FILE,
        }
    }

    pub fn all() -> [Split; 3] {
        [Split::Train, Split::Test, Split::Validate]
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validate" | "val" => Ok(Split::Validate),
            other => Err(format!("unknown split {other:?} (expected train, test or validate)")),
        }
    }
}

/// Corpus definition. Defaults: 200 points per sample, 90/5/5 split,
/// depth 4 trees, x in [-3, 3], constants in [-2, 2].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_points: usize,
    /// (train, test, validate) fractions.
    pub split: (f64, f64, f64),
    pub max_depth: usize,
    pub x_range: (f64, f64),
    pub const_range: (f64, f64),
    pub seed: u64,
    pub max_len: usize,
    /// Points with |y| above this are rejected like non-finite ones.
    pub max_abs_y: f64,
    /// Per-point redraw budget before the whole sample is discarded.
    pub max_point_rejections: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_points: 200,
            split: (0.90, 0.05, 0.05),
            max_depth: 4,
            x_range: (-3.0, 3.0),
            const_range: (-2.0, 2.0),
            seed: 0,
            max_len: MAX_SEQ_LEN,
            max_abs_y: 1e4,
            max_point_rejections: 50,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidConfig(format!("split fractions {a}/{b}/{c} must be in [0,1] and sum to 1")));
        }
        if self.n_points == 0 {
            return Err(DatasetError::InvalidConfig("n_points must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(DatasetError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if self.max_len == 0 {
            return Err(DatasetError::InvalidConfig("max_len must be at least 1".into()));
        }
        if !(self.x_range.0 < self.x_range.1) || !(self.const_range.0 <= self.const_range.1) {
            return Err(DatasetError::InvalidConfig("ranges must be non-empty intervals".into()));
        }
        if !(self.max_abs_y > 0.0) {
            return Err(DatasetError::InvalidConfig("max_abs_y must be positive".into()));
        }
        Ok(())
    }

    /// Record counts per split. Train and test round to nearest; validate
    /// takes the remainder so the partition is exact.
    pub fn split_counts(&self) -> SplitCounts {
        let n = self.n_samples;
        let train = ((n as f64) * self.split.0).round() as usize;
        let test = (((n as f64) * self.split.1).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        SplitCounts { train, test, validate: n - train - test }
    }
}
