//! Differential evolution, rand/1/bin.

use serde::{Deserialize, Serialize};

use crate::rng::PortableRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub generations: usize,
    /// Mutation factor F.
    pub mutation: f64,
    /// Crossover rate CR.
    pub crossover: f64,
    /// Population is `max(min_population, population_per_dim * d)`.
    pub min_population: usize,
    pub population_per_dim: usize,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self { generations: 100, mutation: 0.5, crossover: 0.7, min_population: 15, population_per_dim: 10 }
    }
}

impl DeConfig {
    pub fn population(&self, dim: usize) -> usize {
        self.min_population.max(self.population_per_dim * dim).max(4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` over the box `bounds`. Trial vectors are clipped to the
/// box, so every member (and the returned best) stays inside it.
pub fn differential_evolution<F>(f: F, bounds: &[(f64, f64)], config: &DeConfig, rng: &mut PortableRng) -> DeResult
where
    F: Fn(&[f64]) -> f64,
{
    let dim = bounds.len();
    if dim == 0 {
        return DeResult { best: Vec::new(), value: f(&[]), evals: 1 };
    }
    let np = config.population(dim);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.uniform(lo, hi)).collect())
        .collect();
    let mut fitness: Vec<f64> = pop.iter().map(|x| f(x)).collect();
    let mut evals = np;

    let mut trial = vec![0.0; dim];
    for _ in 0..config.generations {
        for i in 0..np {
            let (r1, r2, r3) = distinct_three(rng, np, i);
            let jrand = rng.below(dim as u64) as usize;
            for j in 0..dim {
                trial[j] = if j == jrand || rng.next_f64() < config.crossover {
                    let v = pop[r1][j] + config.mutation * (pop[r2][j] - pop[r3][j]);
                    v.clamp(bounds[j].0, bounds[j].1)
                } else {
                    pop[i][j]
                };
            }
            let ft = f(&trial);
            evals += 1;
            if ft <= fitness[i] || fitness[i].is_nan() {
                pop[i].copy_from_slice(&trial);
                fitness[i] = ft;
            }
        }
    }

    let best = (0..np)
        .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]))
        .expect("population is non-empty");
    DeResult { best: pop[best].clone(), value: fitness[best], evals }
}

fn distinct_three(rng: &mut PortableRng, np: usize, exclude: usize) -> (usize, usize, usize) {
    let mut draw = |taken: &[usize]| loop {
        let k = rng.below(np as u64) as usize;
        if k != exclude && !taken.contains(&k) {
            return k;
        }
    };
    let a = draw(&[]);
    let b = draw(&[a]);
    let c = draw(&[a, b]);
    (a, b, c)
}
