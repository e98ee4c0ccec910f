/// Tolerances reported for Acc_τ.
pub const TAUS: [f64; 3] = [0.1, 0.01, 0.001];

/// Coefficient of determination clamped to `[0, 1]`.
///
/// When `y` has zero variance the score is 1 for an exact prediction and 0
/// otherwise. Non-finite predictions score 0.
pub fn r2_score(y: &[f64], yhat: &[f64]) -> f64 {
    assert_eq!(y.len(), yhat.len(), "r2_score: length mismatch");
    if y.is_empty() {
        return 0.0;
    }
    // the rounded mean of equal values can differ from them, so a constant
    // target is detected directly
    if y.iter().all(|&v| v == y[0]) {
        return if y == yhat { 1.0 } else { 0.0 };
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    if r2.is_nan() {
        0.0
    } else {
        r2.clamp(0.0, 1.0)
    }
}

/// Whether the worst pointwise relative error is within `tau`. Points with
/// `y = 0` use the absolute error instead.
pub fn acc_tau(y: &[f64], yhat: &[f64], tau: f64) -> bool {
    assert_eq!(y.len(), yhat.len(), "acc_tau: length mismatch");
    max_relative_error(y, yhat) <= tau
}

/// `max_i |yhat_i - y_i| / |y_i|` (absolute error where `y_i = 0`); NaN maps to infinity.
pub fn max_relative_error(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(&a, &b)| {
            let err = if a == 0.0 { b.abs() } else { ((b - a) / a).abs() };
            if err.is_nan() {
                f64::INFINITY
            } else {
                err
            }
        })
        .fold(0.0, f64::max)
}
