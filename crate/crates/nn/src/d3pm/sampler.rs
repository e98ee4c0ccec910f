use symdiff_core::rng::PortableRng;

use super::schedule::{softmax, TransitionModel};
use crate::error::{NnError, Result};

/// Predicts x0 logits from noisy tokens. The condition is bound by the
/// implementor.
pub trait Denoiser {
    /// Flattened `B x S x K` logits for `xt` (`B x S`) at per-example steps `t`.
    fn x0_logits(&self, xt: &[u32], t: &[usize], batch: usize) -> Result<Vec<f64>>;
}

/// Visited timesteps, from `T` down to 1, evenly spaced. `steps = 1`
/// visits only `T`.
pub fn timestep_ladder(timesteps: usize, steps: usize) -> Vec<usize> {
    let steps = steps.clamp(1, timesteps);
    if steps == 1 {
        return vec![timesteps];
    }
    let span = (timesteps - 1) as f64;
    let mut out: Vec<usize> = (0..steps).map(|i| (timesteps as f64 - i as f64 * span / (steps - 1) as f64).round() as usize).collect();
    out.dedup();
    out
}

/// Ancestral sampling. Starts from uniform noise, samples the model
/// posterior between consecutive ladder steps, and returns the argmax of
/// the x0 logits at the final step.
pub fn sample<M: Denoiser + ?Sized>(
    model: &M,
    batch: usize,
    seq_len: usize,
    tm: &TransitionModel,
    rng: &mut PortableRng,
    steps: usize,
) -> Result<Vec<Vec<u32>>> {
    let k = tm.k();
    let mut xt: Vec<u32> = (0..batch * seq_len).map(|_| rng.below(k as u64) as u32).collect();
    let ladder = timestep_ladder(tm.timesteps(), steps);
    for (i, &t) in ladder.iter().enumerate() {
        let logits = model.x0_logits(&xt, &vec![t; batch], batch)?;
        if logits.len() != batch * seq_len * k {
            return Err(NnError::ShapeMismatch(format!("denoiser returned {} logits, expected {}", logits.len(), batch * seq_len * k)));
        }
        match ladder.get(i + 1) {
            Some(&s) => {
                for (pos, x) in xt.iter_mut().enumerate() {
                    let p = softmax(&logits[pos * k..(pos + 1) * k]);
                    let logpost = tm.log_posterior_between(*x, &p, s, t);
                    let w: Vec<f64> = logpost.iter().map(|v| v.exp()).collect();
                    *x = rng.categorical(&w) as u32;
                }
            }
            None => {
                for (pos, x) in xt.iter_mut().enumerate() {
                    *x = argmax(&logits[pos * k..(pos + 1) * k]) as u32;
                }
            }
        }
    }
    Ok(xt.chunks(seq_len.max(1)).map(|c| c.to_vec()).collect())
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
