//! T-Net style point-cloud encoder: three per-point affine stages with
//! batch normalization and ReLU, a global max-pool over points, then two
//! dense layers down to the condition embedding.

use candle_core::{Result, Tensor};
use symdiff_core::rng::PortableRng;

use crate::params::{Linear, ParamStore};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over channels, statistics taken across batch and points.
#[derive(Clone)]
pub struct BatchNorm {
    pub gamma: candle_core::Var,
    pub beta: candle_core::Var,
    pub running_mean: candle_core::Var,
    pub running_var: candle_core::Var,
}

impl BatchNorm {
    pub fn new(store: &ParamStore, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant("gamma", &[channels], 1.0)?,
            beta: store.constant("beta", &[channels], 0.0)?,
            running_mean: store.buffer("running_mean", &[channels], 0.0)?,
            running_var: store.buffer("running_var", &[channels], 1.0)?,
        })
    }

    /// `x` is `(rows, channels)`. In train mode normalizes with batch
    /// statistics and folds them into the running estimates.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (mean, var) = if train {
            let rows = x.dim(0)?;
            let mean = x.mean_keepdim(0)?;
            let var = x.broadcast_sub(&mean)?.sqr()?.mean_keepdim(0)?;
            let unbiased = if rows > 1 { (var.detach() * (rows as f64 / (rows - 1) as f64))? } else { var.detach() };
            let rm = ((self.running_mean.as_tensor() * (1.0 - BN_MOMENTUM))? + (mean.detach().squeeze(0)? * BN_MOMENTUM)?)?;
            let rv = ((self.running_var.as_tensor() * (1.0 - BN_MOMENTUM))? + (unbiased.squeeze(0)? * BN_MOMENTUM)?)?;
            self.running_mean.set(&rm)?;
            self.running_var.set(&rv)?;
            (mean, var)
        } else {
            (self.running_mean.as_tensor().unsqueeze(0)?, self.running_var.as_tensor().unsqueeze(0)?)
        };
        let normed = x.broadcast_sub(&mean)?.broadcast_div(&(var + BN_EPS)?.sqrt()?)?;
        normed.broadcast_mul(self.gamma.as_tensor())?.broadcast_add(self.beta.as_tensor())
    }
}

#[derive(Clone)]
pub struct PointEncoder {
    stages: Vec<(Linear, BatchNorm)>,
    fc1: Linear,
    fc2: Linear,
    embed_dim: usize,
}

impl PointEncoder {
    pub fn new(store: &ParamStore, input_dim: usize, embed_dim: usize) -> Result<Self> {
        let e = embed_dim;
        let widths = [(input_dim, e), (e, 2 * e), (2 * e, 4 * e)];
        let stages = widths
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let s = store.pp(&format!("stage{}", i + 1));
                Ok((Linear::new(&s.pp("conv"), a, b)?, BatchNorm::new(&s.pp("bn"), b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stages, fc1: Linear::new(&store.pp("fc1"), 4 * e, 2 * e)?, fc2: Linear::new(&store.pp("fc2"), 2 * e, e)?, embed_dim })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    /// Per-point features before pooling, `(B, N, 4E)`.
    pub fn point_features(&self, points: &Tensor, train: bool) -> Result<Tensor> {
        let (b, n, _) = points.dims3()?;
        let mut h = points.reshape((b * n, points.dim(2)?))?;
        for (conv, bn) in &self.stages {
            h = bn.forward(&conv.forward(&h)?, train)?.relu()?;
        }
        h.reshape((b, n, 4 * self.embed_dim))
    }

    /// Encodes `(B, N, 3)` points into `(B, E)`. Train mode (`rng` given)
    /// uses batch statistics; the encoder itself has no dropout, so the rng
    /// only selects the mode.
    pub fn forward(&self, points: &Tensor, rng: Option<&mut PortableRng>) -> Result<Tensor> {
        let pooled = self.point_features(points, rng.is_some())?.max(1)?;
        self.fc2.forward(&self.fc1.forward(&pooled)?.relu()?)
    }

    pub fn forward_eval(&self, points: &Tensor) -> Result<Tensor> {
        self.forward(points, None)
    }
}
