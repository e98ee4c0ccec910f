use rayon::prelude::*;

use crate::constfit::{fit_constants, FitConfig, FitProblem};
use crate::dataset::{DatasetSplit, SampleRecord};
use crate::rng::PortableRng;
use crate::rpn::Program;
use crate::vocab::{TokenSequence, Vocabulary};

use super::report::{EvalReport, SampleScore};
use super::score::{acc_tau, r2_score, TAUS};

/// Anything that proposes one skeleton per point cloud.
pub trait SkeletonGenerator {
    fn name(&self) -> String;

    fn mode(&self) -> String;

    /// One skeleton per record, in order. `batch_index` lets seeded
    /// generators derive a per-batch random stream.
    fn generate(&mut self, records: &[&SampleRecord], batch_index: u64) -> Result<Vec<TokenSequence>, String>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub fit: FitConfig,
    pub seed: u64,
    /// Evaluate only the first `limit` records of the split.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { batch_size: 64, fit: FitConfig::default(), seed: 0, limit: None }
    }
}

/// Fits and scores one generated skeleton on the record's own points.
pub fn score_sample(sample_id: usize, record: &SampleRecord, generated: &TokenSequence, vocab: &Vocabulary, config: &EvalConfig) -> SampleScore {
    let expr = vocab.detokenize(generated);
    let Ok(program) = Program::compile(generated, vocab) else {
        return SampleScore::failed(sample_id, expr);
    };
    let problem = FitProblem::from_program(program, &record.points, config.fit.bounds);
    let mut rng = PortableRng::new(config.seed, sample_id as u64);
    let fit = fit_constants(&problem, &config.fit, &mut rng);
    let yhat = problem.predict(&fit.constants);
    let y: Vec<f64> = record.points.iter().map(|p| p[2]).collect();
    let [acc_01, acc_001, acc_0001] = TAUS.map(|tau| acc_tau(&y, &yhat, tau));
    SampleScore { sample_id, valid: true, r2: r2_score(&y, &yhat), acc_01, acc_001, acc_0001, sse: Some(fit.sse), generated_expr: expr }
}

/// Generates a skeleton for every record, fits constants where the
/// skeleton is valid, and scores it. Invalid or failed generations score
/// r2 = 0 with every accuracy false; nothing aborts the run.
pub fn evaluate_model<G: SkeletonGenerator + ?Sized>(
    generator: &mut G,
    split: &DatasetSplit,
    split_name: &str,
    vocab: &Vocabulary,
    config: &EvalConfig,
) -> EvalReport {
    let n = config.limit.map_or(split.len(), |l| l.min(split.len()));
    let mut scores = Vec::with_capacity(n);
    let ids: Vec<usize> = (0..n).collect();
    for (batch_index, chunk) in ids.chunks(config.batch_size.max(1)).enumerate() {
        let records: Vec<&SampleRecord> = chunk.iter().map(|&i| &split.records[i]).collect();
        match generator.generate(&records, batch_index as u64) {
            Ok(generated) if generated.len() == chunk.len() => {
                let batch: Vec<SampleScore> = chunk
                    .par_iter()
                    .zip(generated.par_iter())
                    .map(|(&i, g)| score_sample(i, &split.records[i], g, vocab, config))
                    .collect();
                scores.extend(batch);
            }
            Ok(_) | Err(_) => scores.extend(chunk.iter().map(|&i| SampleScore::failed(i, String::new()))),
        }
    }
    EvalReport::new(generator.name(), generator.mode(), split_name, scores)
}

/// Returns each record's own ground-truth skeleton.
#[derive(Debug, Default)]
pub struct OracleGenerator;

impl SkeletonGenerator for OracleGenerator {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn mode(&self) -> String {
        "oracle".into()
    }

    fn generate(&mut self, records: &[&SampleRecord], _batch_index: u64) -> Result<Vec<TokenSequence>, String> {
        Ok(records.iter().map(|r| r.tokens.clone()).collect())
    }
}

/// Emits the same skeleton for every input.
#[derive(Debug)]
pub struct FixedGenerator(pub TokenSequence);

impl SkeletonGenerator for FixedGenerator {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn mode(&self) -> String {
        "fixed".into()
    }

    fn generate(&mut self, records: &[&SampleRecord], _batch_index: u64) -> Result<Vec<TokenSequence>, String> {
        Ok(vec![self.0.clone(); records.len()])
    }
}
