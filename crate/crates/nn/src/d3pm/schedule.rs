//! Noise schedule and the uniform-other transition family.
//!
//! One step keeps a token with probability `1 - beta_t` and otherwise moves
//! it to one of the other `K - 1` tokens uniformly. Writing
//! `gamma_t = 1 - beta_t * K / (K - 1)`, the step matrix is
//! `gamma_t * I + (1 - gamma_t) / K * J`, so products stay in the same family
//! and the cumulative matrix is `gbar_t * I + (1 - gbar_t) / K * J` with
//! `gbar_t` the running product of the gammas.

use serde::{Deserialize, Serialize};
use symdiff_core::rng::PortableRng;

use crate::error::{NnError, Result};

/// Floor applied before taking logs of probabilities.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Weight of the auxiliary cross-entropy on the x0 prediction.
    pub lambda: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { timesteps: 1000, beta_min: 1e-4, beta_max: 0.02, lambda: 0.01 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.timesteps == 0 {
            return bad("timesteps must be at least 1");
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return bad("need 0 < beta_min <= beta_max < 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        Ok(())
    }

    pub fn transition_model(&self, k: usize) -> Result<TransitionModel> {
        self.validate()?;
        TransitionModel::new(k, NoiseSchedule::cosine(self.timesteps, self.beta_min, self.beta_max))
    }
}

/// Per-step corruption probabilities `beta_1..beta_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
}

impl NoiseSchedule {
    /// Half-cosine ramp of beta itself, exact at both endpoints:
    /// `beta_t = lo + (hi - lo) * (1 - cos(pi * (t - 1) / (T - 1))) / 2`.
    pub fn cosine(timesteps: usize, beta_min: f64, beta_max: f64) -> Self {
        let betas = (1..=timesteps)
            .map(|t| {
                if timesteps == 1 {
                    return beta_min;
                }
                let frac = (t - 1) as f64 / (timesteps - 1) as f64;
                beta_min + (beta_max - beta_min) * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
            })
            .collect();
        Self { betas }
    }

    pub fn constant(timesteps: usize, beta: f64) -> Self {
        Self { betas: vec![beta; timesteps] }
    }

    pub fn from_betas(betas: Vec<f64>) -> Self {
        Self { betas }
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    k: usize,
    schedule: NoiseSchedule,
    gammas: Vec<f64>,
    /// `gamma_bar[t]` for `t = 0..=T`, with `gamma_bar[0] = 1`.
    gamma_bar: Vec<f64>,
}

impl TransitionModel {
    pub fn new(k: usize, schedule: NoiseSchedule) -> Result<Self> {
        if k < 2 {
            return Err(NnError::InvalidConfig(format!("need at least 2 categories, got {k}")));
        }
        if schedule.timesteps() == 0 {
            return Err(NnError::InvalidConfig("empty schedule".into()));
        }
        let kf = k as f64;
        let gammas: Vec<f64> = schedule.betas().iter().map(|b| 1.0 - b * kf / (kf - 1.0)).collect();
        if let Some((i, b)) = schedule.betas().iter().enumerate().find(|(i, _)| !(gammas[*i] > 0.0 && gammas[*i] <= 1.0)) {
            return Err(NnError::InvalidConfig(format!("beta_{} = {b} leaves gamma outside (0, 1] for K = {k}", i + 1)));
        }
        let mut gamma_bar = Vec::with_capacity(gammas.len() + 1);
        gamma_bar.push(1.0);
        for g in &gammas {
            gamma_bar.push(gamma_bar.last().unwrap() * g);
        }
        Ok(Self { k, schedule, gammas, gamma_bar })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn timesteps(&self) -> usize {
        self.schedule.timesteps()
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t - 1]
    }

    /// `gbar_t`; `t = 0` gives 1.
    pub fn gamma_bar(&self, t: usize) -> f64 {
        self.gamma_bar[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(NnError::TimestepOutOfRange { t, max: self.timesteps() });
        }
        Ok(())
    }

    fn family(&self, gamma: f64) -> Vec<Vec<f64>> {
        let off = (1.0 - gamma) / self.k as f64;
        (0..self.k).map(|i| (0..self.k).map(|j| if i == j { gamma + off } else { off }).collect()).collect()
    }

    /// `Q_t`, written directly from beta.
    pub fn one_step_matrix(&self, t: usize) -> Vec<Vec<f64>> {
        let beta = self.schedule.beta(t);
        let off = beta / (self.k - 1) as f64;
        (0..self.k).map(|i| (0..self.k).map(|j| if i == j { 1.0 - beta } else { off }).collect()).collect()
    }

    /// `Qbar_t` in closed form; `t = 0` gives the identity.
    pub fn cumulative_matrix(&self, t: usize) -> Vec<Vec<f64>> {
        self.family(self.gamma_bar[t])
    }

    /// Transition from step `s` to step `t > s` in closed form.
    pub fn skip_matrix(&self, s: usize, t: usize) -> Vec<Vec<f64>> {
        self.family(self.gamma_bar[t] / self.gamma_bar[s])
    }

    /// `M[i][j]` of [`skip_matrix`](Self::skip_matrix) without building it.
    fn skip_entry(&self, s: usize, t: usize, i: usize, j: usize) -> f64 {
        let g = self.gamma_bar[t] / self.gamma_bar[s];
        let off = (1.0 - g) / self.k as f64;
        if i == j {
            g + off
        } else {
            off
        }
    }

    /// Marginal `q(x_t | x0)` per position, flattened `B x S x K`.
    /// `x0` is `B x S` row-major and `t` holds one step per example.
    pub fn q_xt_given_x0(&self, x0: &[u32], t: &[usize]) -> Result<Vec<f64>> {
        let seq = self.seq_len(x0.len(), t.len())?;
        let mut out = Vec::with_capacity(x0.len() * self.k);
        for (b, &tb) in t.iter().enumerate() {
            self.check_t(tb)?;
            let gb = self.gamma_bar[tb];
            let off = (1.0 - gb) / self.k as f64;
            for &x in &x0[b * seq..(b + 1) * seq] {
                self.check_id(x)?;
                out.extend((0..self.k).map(|j| if j == x as usize { gb + off } else { off }));
            }
        }
        Ok(out)
    }

    /// Draws `x_t ~ q(x_t | x0)`: keep the token with probability `gbar_t`,
    /// otherwise resample uniformly over all `K` categories.
    pub fn sample_xt(&self, x0: &[u32], t: &[usize], rng: &mut PortableRng) -> Result<Vec<u32>> {
        let seq = self.seq_len(x0.len(), t.len())?;
        let mut out = Vec::with_capacity(x0.len());
        for (b, &tb) in t.iter().enumerate() {
            self.check_t(tb)?;
            let gb = self.gamma_bar[tb];
            for &x in &x0[b * seq..(b + 1) * seq] {
                self.check_id(x)?;
                let keep = rng.next_f64() < gb;
                out.push(if keep { x } else { rng.below(self.k as u64) as u32 });
            }
        }
        Ok(out)
    }

    /// Exact `q(x_{t-1} | x_t, x0)` for one position, `t >= 2`.
    pub fn true_posterior(&self, xt: u32, x0: u32, t: usize) -> Vec<f64> {
        let (xt, x0) = (xt as usize, x0 as usize);
        let beta = self.schedule.beta(t);
        let stay = 1.0 - beta;
        let move_ = beta / (self.k - 1) as f64;
        let gb = self.gamma_bar[t - 1];
        let off = (1.0 - gb) / self.k as f64;
        let mut w: Vec<f64> = (0..self.k)
            .map(|j| {
                let forward = if j == xt { stay } else { move_ };
                let prior = if j == x0 { gb + off } else { off };
                forward * prior
            })
            .collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        w
    }

    /// Log of the model posterior over `x_s` given `x_t` and a predicted
    /// distribution over x0, `s < t`: proportional to
    /// `M_{s->t}[x_s, x_t] * (gbar_s * p(x_s) + (1 - gbar_s) / K)`,
    /// the sum over x0 of the joint `q(x_s, x_t | x0) p(x0)`.
    pub fn log_posterior_between(&self, xt: u32, x0_probs: &[f64], s: usize, t: usize) -> Vec<f64> {
        let gb = self.gamma_bar[s];
        let off = (1.0 - gb) / self.k as f64;
        let logw: Vec<f64> = (0..self.k)
            .map(|j| {
                let m = self.skip_entry(s, t, j, xt as usize);
                m.max(LOG_FLOOR).ln() + (gb * x0_probs[j] + off).max(LOG_FLOOR).ln()
            })
            .collect();
        let lse = log_sum_exp(&logw);
        logw.into_iter().map(|v| v - lse).collect()
    }

    /// Model posterior over `x_{t-1}` per position, flattened `B x S x K`.
    /// `x0_dist` rows must sum to 1. At `t = 1` the result is `x0_dist`.
    pub fn posterior(&self, xt: &[u32], x0_dist: &[f64], t: &[usize]) -> Result<Vec<f64>> {
        let seq = self.seq_len(xt.len(), t.len())?;
        if x0_dist.len() != xt.len() * self.k {
            return Err(NnError::ShapeMismatch(format!("x0_dist has {} entries, expected {}", x0_dist.len(), xt.len() * self.k)));
        }
        for (row, p) in x0_dist.chunks(self.k).enumerate() {
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0) {
                return Err(NnError::UnnormalizedInput { row, sum });
            }
        }
        let mut out = Vec::with_capacity(x0_dist.len());
        for (pos, &x) in xt.iter().enumerate() {
            let tb = t[pos / seq.max(1)];
            self.check_t(tb)?;
            self.check_id(x)?;
            let p = &x0_dist[pos * self.k..(pos + 1) * self.k];
            if tb == 1 {
                out.extend_from_slice(p);
            } else {
                out.extend(self.log_posterior_between(x, p, tb - 1, tb).into_iter().map(f64::exp));
            }
        }
        Ok(out)
    }

    fn seq_len(&self, n_ids: usize, batch: usize) -> Result<usize> {
        if batch == 0 || n_ids % batch != 0 {
            return Err(NnError::ShapeMismatch(format!("{n_ids} ids do not split into {batch} examples")));
        }
        Ok(n_ids / batch)
    }

    fn check_id(&self, x: u32) -> Result<()> {
        if x as usize >= self.k {
            return Err(NnError::ShapeMismatch(format!("token id {x} outside 0..{}", self.k)));
        }
        Ok(())
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| (v - lse).exp()).collect()
}
