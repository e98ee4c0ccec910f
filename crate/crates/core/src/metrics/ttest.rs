use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TTestError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least two pairs, got {0}")]
    TooFewPairs(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: usize,
    pub mean_difference: f64,
    /// All differences identical: `p` is 1 when their mean is 0, else 0.
    pub degenerate: bool,
}

/// Paired Student's t-test on `a - b`, two-sided.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, TTestError> {
    if a.len() != b.len() {
        return Err(TTestError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(TTestError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { t, p, df, mean_difference: mean, degenerate: true });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest { t, p: two_sided_p(t, df as f64), df, mean_difference: mean, degenerate: false })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom, as the
/// regularized incomplete beta `I_{df/(df+t^2)}(df/2, 1/2)`.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}
