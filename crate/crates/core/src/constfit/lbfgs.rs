//! Limited-memory BFGS with a strong-Wolfe line search and central
//! finite-difference gradients.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::FitResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Stop when the gradient infinity norm falls to this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease falls to this.
    pub ftol: f64,
    /// Central-difference step is `fd_step * max(1, |c|)`.
    pub fd_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iters: 200, history: 10, c1: 1e-4, c2: 0.9, grad_tol: 1e-8, ftol: 1e-12, fd_step: 1e-6 }
    }
}

struct Counted<'a, F> {
    f: &'a F,
    evals: usize,
}

impl<F: Fn(&[f64]) -> f64> Counted<'_, F> {
    fn value(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        (self.f)(x)
    }

    fn gradient(&mut self, x: &[f64], step: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = step * x[i].abs().max(1.0);
                probe[i] = x[i] + h;
                let up = self.value(&probe);
                probe[i] = x[i] - h;
                let down = self.value(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn axpy(x: &[f64], alpha: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(xi, pi)| xi + alpha * pi).collect()
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn eval_at<F: Fn(&[f64]) -> f64>(obj: &mut Counted<'_, F>, x: &[f64], p: &[f64], alpha: f64, cfg: &LbfgsConfig) -> Trial {
    let xn = axpy(x, alpha, p);
    let f = obj.value(&xn);
    let g = obj.gradient(&xn, cfg.fd_step);
    Trial { alpha, x: xn, f, g }
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` when no
/// acceptable step is found.
fn line_search<F: Fn(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    p: &[f64],
    alpha_init: f64,
    cfg: &LbfgsConfig,
) -> Option<Trial> {
    let d0 = dot(g0, p);

    let mut prev = Trial { alpha: 0.0, x: x.to_vec(), f: f0, g: g0.to_vec() };
    let mut alpha = alpha_init;
    for i in 0..25 {
        let cur = eval_at(obj, x, p, alpha, cfg);
        if !cur.f.is_finite() || cur.f > f0 + cfg.c1 * alpha * d0 || (i > 0 && cur.f >= prev.f) {
            return zoom(obj, x, prev, cur, f0, d0, p, cfg);
        }
        let d = dot(&cur.g, p);
        if d.abs() <= -cfg.c2 * d0 {
            return Some(cur);
        }
        if d >= 0.0 {
            return zoom(obj, x, cur, prev, f0, d0, p, cfg);
        }
        prev = cur;
        alpha *= 2.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F: Fn(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    x: &[f64],
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    d0: f64,
    p: &[f64],
    cfg: &LbfgsConfig,
) -> Option<Trial> {
    for _ in 0..40 {
        let width = hi.alpha - lo.alpha;
        if width.abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        // quadratic through f(lo), f'(lo), f(hi), kept away from the ends
        let d_lo = dot(&lo.g, p);
        let denom = 2.0 * (hi.f - lo.f - d_lo * width);
        let mut alpha = if hi.f.is_finite() && denom.abs() > 0.0 {
            lo.alpha - d_lo * width * width / denom
        } else {
            f64::NAN
        };
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let margin = 0.1 * (b - a);
        if !alpha.is_finite() || alpha < a + margin || alpha > b - margin {
            alpha = 0.5 * (lo.alpha + hi.alpha);
        }
        let cur = eval_at(obj, x, p, alpha, cfg);
        if !cur.f.is_finite() || cur.f > f0 + cfg.c1 * alpha * d0 || cur.f >= lo.f {
            hi = cur;
        } else {
            let d = dot(&cur.g, p);
            if d.abs() <= -cfg.c2 * d0 {
                return Some(cur);
            }
            if d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // the bracket collapsed; accept lo if it made progress
    (lo.alpha > 0.0 && lo.f < f0).then_some(lo)
}

/// Minimizes `f` from `x0`. `converged` is false when the line search fails
/// or `max_iters` is exhausted; the best iterate is returned either way.
pub fn lbfgs<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> FitResult
where
    F: Fn(&[f64]) -> f64,
{
    let mut obj = Counted { f: &f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = obj.value(&x);
    if x.is_empty() {
        return FitResult { constants: x, sse: fx, converged: true, evals: obj.evals };
    }
    let mut g = obj.gradient(&x, cfg.fd_step);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut converged = false;

    for iter in 0..cfg.max_iters {
        if inf_norm(&g) <= cfg.grad_tol {
            converged = true;
            break;
        }

        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut p: Vec<f64> = q.iter().map(|v| -v).collect();
        if !(dot(&p, &g) < 0.0) {
            history.clear();
            p = g.iter().map(|v| -v).collect();
        }

        let alpha_init = if iter == 0 || history.is_empty() { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let Some(step) = line_search(&mut obj, &x, fx, &g, &p, alpha_init, cfg) else {
            break;
        };

        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == cfg.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        let decrease = fx - step.f;
        let scale = fx.abs().max(step.f.abs()).max(f64::MIN_POSITIVE);
        x = step.x;
        g = step.g;
        fx = step.f;
        if decrease <= cfg.ftol * scale {
            converged = true;
            break;
        }
    }
    if !converged && inf_norm(&g) <= cfg.grad_tol {
        converged = true;
    }
    FitResult { constants: x, sse: fx, converged, evals: obj.evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_quadratic() {
        let r = lbfgs(|c| (c[0] - 2.0).powi(2), &[0.0], &LbfgsConfig::default());
        assert!((r.constants[0] - 2.0).abs() <= 1e-6, "{:?}", r);
        assert!(r.converged);
    }

    #[test]
    fn empty_problem_returns_immediately() {
        let r = lbfgs(|_| 7.5, &[], &LbfgsConfig::default());
        assert_eq!(r.sse, 7.5);
        assert!(r.constants.is_empty());
        assert_eq!(r.evals, 1);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = lbfgs(f, &[-1.2, 1.0], &LbfgsConfig::default());
        assert!((r.constants[0] - 1.0).abs() < 1e-4 && (r.constants[1] - 1.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn non_finite_region_is_avoided() {
        // log barrier: infinite for c <= 0
        let f = |c: &[f64]| if c[0] <= 0.0 { f64::INFINITY } else { c[0] - c[0].ln() };
        let r = lbfgs(f, &[5.0], &LbfgsConfig::default());
        assert!((r.constants[0] - 1.0).abs() < 1e-5, "{r:?}");
        assert!(r.sse.is_finite());
    }
}
