//! Scoring: clamped R², Acc_τ, valid-RPN rate, paired t-test, and the
//! evaluation harness that produces per-sample and aggregate reports.

mod eval;
mod report;
mod score;
mod ttest;

pub use eval::{evaluate_model, score_sample, EvalConfig, FixedGenerator, OracleGenerator, SkeletonGenerator};
pub use report::{
    compare_models, read_samples_csv, write_samples_csv, Aggregates, Comparison, ComparisonRow, EvalReport, ReportError,
    SampleScore, REPORT_FILE, SAMPLES_FILE,
};
pub use score::{acc_tau, max_relative_error, r2_score, TAUS};
pub use ttest::{paired_t_test, two_sided_p, TTest, TTestError};
