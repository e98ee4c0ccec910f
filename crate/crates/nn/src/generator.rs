//! Adapters from trained models to the evaluation harness.

use candle_core::{DType, Tensor};
use symdiff_core::dataset::SampleRecord;
use symdiff_core::metrics::SkeletonGenerator;
use symdiff_core::rng::PortableRng;
use symdiff_core::TokenSequence;

use crate::argen::{ar_sample, Strategy};
use crate::backbone::{Mode, SymbolicModel};
use crate::checkpoint::LoadedCheckpoint;
use crate::d3pm::{sample, Denoiser, TransitionModel};
use crate::error::{NnError, Result};

/// A diffusion model with its condition vectors already computed.
pub struct ConditionedDenoiser<'a> {
    pub model: &'a SymbolicModel,
    pub cond: Tensor,
}

impl Denoiser for ConditionedDenoiser<'_> {
    fn x0_logits(&self, xt: &[u32], t: &[usize], batch: usize) -> Result<Vec<f64>> {
        let logits = self.model.forward_with_condition(xt, batch, &self.cond, Some(t), None)?;
        Ok(logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Reverse steps for diffusion; the full schedule by default.
    pub steps: Option<usize>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { steps: None, strategy: Strategy::Greedy, seed: 0 }
    }
}

/// Generates skeletons with a loaded checkpoint of either mode.
pub struct ModelGenerator {
    pub checkpoint: LoadedCheckpoint,
    tm: Option<TransitionModel>,
    sampling: SamplingConfig,
    name: String,
}

impl ModelGenerator {
    pub fn new(checkpoint: LoadedCheckpoint, sampling: SamplingConfig, name: impl Into<String>) -> Result<Self> {
        let tm = match checkpoint.mode() {
            Mode::Diffusion => {
                let cfg = checkpoint.header.diffusion.ok_or_else(|| NnError::CorruptCheckpoint("diffusion checkpoint without schedule".into()))?;
                Some(cfg.transition_model(checkpoint.header.model.vocab_size)?)
            }
            Mode::Autoregressive => None,
        };
        Ok(Self { checkpoint, tm, sampling, name: name.into() })
    }

    /// One token sequence per point cloud (`B x N x 3`).
    pub fn generate_ids(&self, points: &Tensor, stream: u64) -> Result<Vec<Vec<u32>>> {
        let model = &self.checkpoint.model;
        let cond = model.encode(points, None)?;
        let mut rng = PortableRng::new(self.sampling.seed, stream);
        let pad = self.checkpoint.vocab.pad();
        match &self.tm {
            Some(tm) => {
                let batch = cond.dim(0)?;
                let steps = self.sampling.steps.unwrap_or(tm.timesteps());
                sample(&ConditionedDenoiser { model, cond }, batch, model.config().max_len, tm, &mut rng, steps)
            }
            None => ar_sample(model, &cond, pad, self.sampling.strategy, &mut rng),
        }
    }
}

impl SkeletonGenerator for ModelGenerator {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn mode(&self) -> String {
        self.checkpoint.mode().as_str().to_string()
    }

    fn generate(&mut self, records: &[&SampleRecord], batch_index: u64) -> std::result::Result<Vec<TokenSequence>, String> {
        let n = records.first().map_or(0, |r| r.points.len());
        if records.iter().any(|r| r.points.len() != n) {
            return Err("records in one batch must share a point count".into());
        }
        let flat: Vec<f32> = records.iter().flat_map(|r| r.points.iter().flat_map(|p| p.map(|v| v as f32))).collect();
        let points = self.checkpoint.model.points_tensor(&flat, records.len(), n).map_err(|e| e.to_string())?;
        let ids = self.generate_ids(&points, batch_index).map_err(|e| e.to_string())?;
        Ok(ids.into_iter().map(TokenSequence::new).collect())
    }
}
