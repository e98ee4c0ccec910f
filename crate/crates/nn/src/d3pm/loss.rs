use candle_core::{Tensor, D};
use candle_nn::ops::log_softmax;

use super::schedule::{TransitionModel, LOG_FLOOR};
use crate::error::{NnError, Result};

/// Hybrid objective and its two parts, as plain numbers for logging.
pub struct LossParts {
    pub total: Tensor,
    pub vb: f64,
    pub ce: f64,
}

/// Hybrid loss from predicted x0 logits `(B, S, K)`.
///
/// Per position: for `t >= 2`, KL from the exact posterior (true x0) to the
/// model posterior induced by the predicted x0 distribution; for `t = 1`,
/// `-log p(x0 | x1)`. Averaged over every position including PAD, plus
/// `lambda` times the cross-entropy of the x0 prediction.
pub fn d3pm_loss_from_logits(logits: &Tensor, x0: &[u32], xt: &[u32], t: &[usize], tm: &TransitionModel, lambda: f64) -> Result<LossParts> {
    let (b, s, k) = logits.dims3()?;
    if k != tm.k() || x0.len() != b * s || xt.len() != b * s || t.len() != b {
        return Err(NnError::ShapeMismatch(format!("logits {b}x{s}x{k} against {} ids, {} steps, K = {}", x0.len(), t.len(), tm.k())));
    }
    let n = b * s * k;
    let mut weights = vec![0.0; n];
    let mut forward = vec![0.0; n];
    let mut onehot = vec![0.0; n];
    let mut entropy = 0.0;
    let mut gb_prev = vec![0.0; b];
    let mut off = vec![0.0; b];
    let mut sel = vec![0.0; b];
    for (ex, &tb) in t.iter().enumerate() {
        tm.check_t(tb)?;
        gb_prev[ex] = tm.gamma_bar(tb - 1);
        off[ex] = (1.0 - gb_prev[ex]) / k as f64;
        sel[ex] = if tb >= 2 { 1.0 } else { 0.0 };
        let q = tm.one_step_matrix(tb);
        for pos in ex * s..(ex + 1) * s {
            let (a, c) = (x0[pos] as usize, xt[pos] as usize);
            if a >= k || c >= k {
                return Err(NnError::ShapeMismatch(format!("token id outside 0..{k}")));
            }
            onehot[pos * k + a] = 1.0;
            if tb >= 2 {
                let post = tm.true_posterior(xt[pos], x0[pos], tb);
                for j in 0..k {
                    weights[pos * k + j] = post[j];
                    forward[pos * k + j] = q[j][c].max(LOG_FLOOR).ln();
                    if post[j] > 0.0 {
                        entropy += post[j] * post[j].ln();
                    }
                }
            } else {
                weights[pos * k + a] = 1.0;
            }
        }
    }
    let dev = logits.device();
    let dt = logits.dtype();
    let mk = |v: Vec<f64>, shape: (usize, usize, usize)| Tensor::from_vec(v, shape, dev).and_then(|t| t.to_dtype(dt));
    let weights = mk(weights, (b, s, k))?;
    let forward = mk(forward, (b, s, k))?;
    let onehot = mk(onehot, (b, s, k))?;
    let gb_prev = mk(gb_prev, (b, 1, 1))?;
    let off = mk(off, (b, 1, 1))?;
    let sel_t = mk(sel.clone(), (b, 1, 1))?;
    let not_sel = mk(sel.iter().map(|v| 1.0 - v).collect(), (b, 1, 1))?;

    let logp = log_softmax(logits, D::Minus1)?;
    let mix = logp.exp()?.broadcast_mul(&gb_prev)?.broadcast_add(&off)?.maximum(LOG_FLOOR)?.log()?;
    let model_post = log_softmax(&(forward + mix)?, D::Minus1)?;
    let logterm = (model_post.broadcast_mul(&sel_t)? + logp.broadcast_mul(&not_sel)?)?;
    let positions = (b * s) as f64;
    let cross = (weights * logterm)?.sum_all()?;
    let vb = ((cross.neg()? + entropy)? / positions)?;
    let ce = ((onehot * &logp)?.sum_all()?.neg()? / positions)?;
    let total = (&vb + (&ce * lambda)?)?;
    Ok(LossParts { vb: scalar(&vb)?, ce: scalar(&ce)?, total })
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
