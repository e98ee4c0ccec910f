//! Fitting the numeric constants of a predicted skeleton: differential
//! evolution for a global start, then L-BFGS refinement.

mod de;
mod lbfgs;

pub use de::{differential_evolution, DeConfig, DeResult};
pub use lbfgs::{lbfgs, LbfgsConfig};

use serde::{Deserialize, Serialize};

use crate::rng::PortableRng;
use crate::rpn::{EvalError, Program};
use crate::vocab::{TokenSequence, Vocabulary};

/// Added per point whose prediction is not finite.
pub const NON_FINITE_PENALTY: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub constants: Vec<f64>,
    /// Sum of squared errors at `constants`.
    pub sse: f64,
    pub converged: bool,
    /// Objective evaluations spent.
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub de: DeConfig,
    pub lbfgs: LbfgsConfig,
    /// Search box for every constant during differential evolution.
    pub bounds: (f64, f64),
    /// Independent DE + L-BFGS attempts; later ones run only while the best
    /// sse exceeds `restart_tol` times the sum of squared targets.
    pub attempts: usize,
    pub restart_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { de: DeConfig::default(), lbfgs: LbfgsConfig::default(), bounds: (-10.0, 10.0), attempts: 3, restart_tol: 1e-14 }
    }
}

/// A skeleton paired with the points it should explain.
#[derive(Debug, Clone)]
pub struct FitProblem<'a> {
    program: Program,
    points: &'a [[f64; 3]],
    bounds: Vec<(f64, f64)>,
}

impl<'a> FitProblem<'a> {
    pub fn new(skeleton: &TokenSequence, vocab: &Vocabulary, points: &'a [[f64; 3]], bounds: (f64, f64)) -> Result<Self, EvalError> {
        let program = Program::compile(skeleton, vocab)?;
        Ok(Self::from_program(program, points, bounds))
    }

    pub fn from_program(program: Program, points: &'a [[f64; 3]], bounds: (f64, f64)) -> Self {
        let bounds = vec![bounds; program.n_constants()];
        Self { program, points, bounds }
    }

    pub fn n_constants(&self) -> usize {
        self.program.n_constants()
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    fn target_energy(&self) -> f64 {
        self.points.iter().map(|p| p[2] * p[2]).sum()
    }

    /// Sum of squared residuals; every non-finite point residual contributes
    /// [`NON_FINITE_PENALTY`] instead, so the value is always finite.
    pub fn objective(&self, constants: &[f64]) -> f64 {
        debug_assert_eq!(constants.len(), self.n_constants());
        self.points
            .iter()
            .map(|p| {
                let r = self.program.eval_raw(&p[..2], constants) - p[2];
                let sq = r * r;
                if sq.is_finite() {
                    sq
                } else {
                    NON_FINITE_PENALTY
                }
            })
            .sum::<f64>()
            .min(f64::MAX)
    }

    /// Predictions at every point (non-finite values pass through).
    pub fn predict(&self, constants: &[f64]) -> Vec<f64> {
        self.points.iter().map(|p| self.program.eval_raw(&p[..2], constants)).collect()
    }
}

/// Differential evolution over the bounds, L-BFGS from its best member, and
/// the better of the two by sse. Repeated up to `config.attempts` times while
/// the fit is not yet exact; the best attempt wins.
pub fn fit_constants(problem: &FitProblem<'_>, config: &FitConfig, rng: &mut PortableRng) -> FitResult {
    if problem.n_constants() == 0 {
        return FitResult { constants: Vec::new(), sse: problem.objective(&[]), converged: true, evals: 1 };
    }
    let good_enough = config.restart_tol * problem.target_energy();
    let mut best = fit_once(problem, config, rng);
    let mut evals = best.evals;
    for _ in 1..config.attempts {
        if best.sse <= good_enough {
            break;
        }
        let next = fit_once(problem, config, rng);
        evals += next.evals;
        if next.sse < best.sse {
            best = next;
        }
    }
    FitResult { evals, ..best }
}

fn fit_once(problem: &FitProblem<'_>, config: &FitConfig, rng: &mut PortableRng) -> FitResult {
    let f = |c: &[f64]| problem.objective(c);
    let de = differential_evolution(f, &problem.bounds, &config.de, rng);
    let refined = lbfgs(f, &de.best, &config.lbfgs);
    let evals = de.evals + refined.evals;
    if refined.sse <= de.value {
        FitResult { evals, ..refined }
    } else {
        FitResult { constants: de.best, sse: de.value, converged: refined.converged, evals }
    }
}
