//! The transformer shared by both generators. Diffusion mode attends in
//! both directions and adds a timestep embedding; autoregressive mode uses a
//! strict causal mask and one extra BOS token.

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::ops::softmax;
use serde::{Deserialize, Serialize};
use symdiff_core::rng::PortableRng;

use crate::error::{NnError, Result};
use crate::params::{dropout, gelu, sinusoidal_table, LayerNorm, Linear, ParamStore};
use crate::pointenc::PointEncoder;

/// Additive attention mask value; `exp` of it underflows to exactly zero.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "diffusion")]
    Diffusion,
    #[serde(rename = "ar")]
    Autoregressive,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Diffusion => "diffusion",
            Mode::Autoregressive => "ar",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "diffusion" => Ok(Mode::Diffusion),
            "ar" | "autoregressive" => Ok(Mode::Autoregressive),
            other => Err(format!("unknown mode `{other}` (expected diffusion or ar)")),
        }
    }
}

/// Width, depth and regularization; identical for both generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { embed_dim: 512, heads: 8, layers: 8, ff_dim: 2048, dropout: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Base vocabulary size, without BOS.
    pub vocab_size: usize,
    /// Diffusion steps; `None` in autoregressive mode.
    pub timesteps: Option<usize>,
    pub mode: Mode,
}

/// Config fields allowed to differ between the two generators.
pub const MODE_SPECIFIC_FIELDS: [&str; 2] = ["mode", "timesteps"];

impl BackboneConfig {
    pub fn new(arch: &Architecture, max_len: usize, vocab_size: usize, mode: Mode, timesteps: usize) -> Self {
        Self {
            embed_dim: arch.embed_dim,
            heads: arch.heads,
            layers: arch.layers,
            ff_dim: arch.ff_dim,
            dropout: arch.dropout,
            max_len,
            vocab_size,
            timesteps: (mode == Mode::Diffusion).then_some(timesteps),
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        for (name, v) in [("embed_dim", self.embed_dim), ("heads", self.heads), ("layers", self.layers), ("ff_dim", self.ff_dim), ("max_len", self.max_len)] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.vocab_size < 2 {
            return bad("vocab_size must be at least 2".into());
        }
        if self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match (self.mode, self.timesteps) {
            (Mode::Diffusion, Some(t)) if t >= 1 => Ok(()),
            (Mode::Diffusion, _) => bad("diffusion mode needs timesteps >= 1".into()),
            (Mode::Autoregressive, None) => Ok(()),
            (Mode::Autoregressive, Some(_)) => bad("autoregressive mode takes no timesteps".into()),
        }
    }

    /// Categories the model reads and predicts: `K`, or `K + 1` with BOS.
    pub fn model_vocab(&self) -> usize {
        self.vocab_size + usize::from(self.mode == Mode::Autoregressive)
    }

    pub fn bos(&self) -> Option<u32> {
        (self.mode == Mode::Autoregressive).then_some(self.vocab_size as u32)
    }

    /// Names of the fields whose values differ.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        a.keys().filter(|k| a.get(*k) != b.get(*k)).cloned().collect()
    }
}

#[derive(Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl Block {
    fn new(store: &ParamStore, e: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(&store.pp("ln1"), e)?,
            qkv: Linear::new(&store.pp("attn.qkv"), e, 3 * e)?,
            proj: Linear::new(&store.pp("attn.proj"), e, e)?,
            ln2: LayerNorm::new(&store.pp("ln2"), e)?,
            ff1: Linear::new(&store.pp("ff.fc1"), e, ff)?,
            ff2: Linear::new(&store.pp("ff.fc2"), ff, e)?,
        })
    }

    fn forward(&self, x: &Tensor, heads: usize, mask: Option<&Tensor>, p: f64, mut rng: Option<&mut PortableRng>) -> Result<Tensor> {
        let (b, s, e) = x.dims3()?;
        let dh = e / heads;
        let qkv = self.qkv.forward(&self.ln1.forward(x)?)?;
        let split = |i: usize| -> candle_core::Result<Tensor> { qkv.narrow(2, i * e, e)?.reshape((b, s, heads, dh))?.transpose(1, 2)?.contiguous() };
        let (q, k, v) = (split(0)?, split(1)?, split(2)?);
        let mut att = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        if let Some(mask) = mask {
            att = att.broadcast_add(mask)?;
        }
        let att = softmax(&att, D::Minus1)?;
        let y = att.matmul(&v)?.transpose(1, 2)?.reshape((b, s, e))?;
        let y = dropout(&self.proj.forward(&y)?, p, rng.as_deref_mut())?;
        let x = (x + y)?;
        let h = self.ff2.forward(&gelu(&self.ff1.forward(&self.ln2.forward(&x)?)?)?)?;
        Ok((&x + dropout(&h, p, rng)?)?)
    }
}

/// Point encoder plus transformer, for either mode.
pub struct SymbolicModel {
    config: BackboneConfig,
    store: ParamStore,
    encoder: PointEncoder,
    token_embedding: Var,
    positions: Tensor,
    time_mlp: Option<(Linear, Linear)>,
    merge: Linear,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    out: Linear,
}

impl SymbolicModel {
    pub fn new(config: BackboneConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype, device.clone());
        let e = config.embed_dim;
        let encoder = PointEncoder::new(&store.pp("encoder"), 3, e)?;
        let bound = 3f64.sqrt();
        let token_embedding = store.param("token_embedding", &[config.model_vocab(), e], |r| r.uniform(-bound, bound))?;
        let positions = sinusoidal_table(&(0..config.max_len).map(|p| p as f64).collect::<Vec<_>>(), e, device, dtype)?;
        let time_mlp = match config.mode {
            Mode::Diffusion => Some((Linear::new(&store.pp("time_mlp.fc1"), e, e)?, Linear::new(&store.pp("time_mlp.fc2"), e, e)?)),
            Mode::Autoregressive => None,
        };
        let merge = Linear::new(&store.pp("merge"), 2 * e, e)?;
        let blocks = (0..config.layers).map(|i| Block::new(&store.pp(&format!("blocks.{i}")), e, config.ff_dim)).collect::<Result<Vec<_>>>()?;
        let final_ln = LayerNorm::new(&store.pp("final_ln"), e)?;
        let out = Linear::new(&store.pp("out"), e, config.model_vocab())?;
        Ok(Self { config, store, encoder, token_embedding, positions, time_mlp, merge, blocks, final_ln, out })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Names and shapes of every trainable tensor.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.store.params().into_iter().map(|(k, v)| (k, v.dims().to_vec())).collect()
    }

    /// Flattened `B x N x 3` coordinates to a tensor in the model dtype.
    pub fn points_tensor(&self, points: &[f32], batch: usize, n_points: usize) -> Result<Tensor> {
        if points.len() != batch * n_points * 3 {
            return Err(NnError::ShapeMismatch(format!("{} coordinates for {batch} x {n_points} x 3", points.len())));
        }
        Ok(Tensor::from_slice(points, (batch, n_points, 3), &self.device())?.to_dtype(self.dtype())?)
    }

    /// Condition vectors `(B, E)`. Train mode (`rng` given) uses batch
    /// statistics in the encoder's batch norms.
    pub fn encode(&self, points: &Tensor, rng: Option<&mut PortableRng>) -> Result<Tensor> {
        let (_, n, c) = points.dims3()?;
        if n == 0 || c != 3 {
            return Err(NnError::ShapeMismatch(format!("points must be B x N x 3 with N >= 1, got {:?}", points.dims())));
        }
        let points = points.to_dtype(self.dtype())?;
        let flat: Vec<f64> = points.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        Ok(self.encoder.forward(&points, rng)?)
    }

    /// Logits `(B, S, K')` for `tokens` (`B x S`, row-major).
    pub fn forward(&self, tokens: &[u32], batch: usize, points: &Tensor, timestep: Option<&[usize]>, mut rng: Option<&mut PortableRng>) -> Result<Tensor> {
        let cond = self.encode(points, rng.as_deref_mut())?;
        self.forward_with_condition(tokens, batch, &cond, timestep, rng)
    }

    pub fn forward_with_condition(&self, tokens: &[u32], batch: usize, cond: &Tensor, timestep: Option<&[usize]>, mut rng: Option<&mut PortableRng>) -> Result<Tensor> {
        let cfg = &self.config;
        let e = cfg.embed_dim;
        if batch == 0 || tokens.len() % batch != 0 {
            return Err(NnError::ShapeMismatch(format!("{} tokens do not split into {batch} rows", tokens.len())));
        }
        let s = tokens.len() / batch;
        if s == 0 || s > cfg.max_len {
            return Err(NnError::ShapeMismatch(format!("sequence length {s} outside 1..={}", cfg.max_len)));
        }
        if cond.dims() != [batch, e] {
            return Err(NnError::ShapeMismatch(format!("condition {:?}, expected [{batch}, {e}]", cond.dims())));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t as usize >= cfg.model_vocab()) {
            return Err(NnError::ShapeMismatch(format!("token id {bad} outside 0..{}", cfg.model_vocab())));
        }
        let device = self.device();
        let ids = Tensor::from_slice(tokens, tokens.len(), &device)?;
        let mut x = self.token_embedding.as_tensor().index_select(&ids, 0)?.reshape((batch, s, e))?;
        x = x.broadcast_add(&self.positions.narrow(0, 0, s)?)?;
        match (&self.time_mlp, timestep) {
            (Some((fc1, fc2)), Some(t)) => {
                if t.len() != batch {
                    return Err(NnError::ShapeMismatch(format!("{} timesteps for batch {batch}", t.len())));
                }
                let max = cfg.timesteps.unwrap_or(0);
                if let Some(&bad) = t.iter().find(|&&v| v == 0 || v > max) {
                    return Err(NnError::TimestepOutOfRange { t: bad, max });
                }
                let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
                let emb = sinusoidal_table(&tf, e, &device, self.dtype())?;
                let emb = fc2.forward(&gelu(&fc1.forward(&emb)?)?)?;
                x = x.broadcast_add(&emb.unsqueeze(1)?)?;
            }
            (Some(_), None) => return Err(NnError::MissingTimestep),
            (None, Some(_)) => return Err(NnError::UnexpectedTimestep),
            (None, None) => {}
        }
        let cond = cond.unsqueeze(1)?.broadcast_as((batch, s, e))?;
        x = self.merge.forward(&Tensor::cat(&[&x, &cond], 2)?)?;
        x = dropout(&x, cfg.dropout, rng.as_deref_mut())?;
        let mask = match cfg.mode {
            Mode::Autoregressive => Some(causal_mask(s, &device, self.dtype())?),
            Mode::Diffusion => None,
        };
        for block in &self.blocks {
            x = block.forward(&x, cfg.heads, mask.as_ref(), cfg.dropout, rng.as_deref_mut())?;
        }
        Ok(self.out.forward(&self.final_ln.forward(&x)?)?)
    }
}

fn causal_mask(s: usize, device: &Device, dtype: DType) -> Result<Tensor> {
    let data: Vec<f64> = (0..s * s).map(|i| if i % s > i / s { MASKED } else { 0.0 }).collect();
    Ok(Tensor::from_vec(data, (s, s), device)?.to_dtype(dtype)?)
}
