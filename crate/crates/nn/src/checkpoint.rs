//! Single-file checkpoint container.
//!
//! Layout: the 8-byte magic `SYMDCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the UTF-8 JSON header, then
//! the payload: every tensor as little-endian `f32`, in header order. The
//! header holds the model and schedule configs, the vocabulary, training
//! metadata, the tensor table and the SHA-256 of the payload.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use symdiff_core::Vocabulary;

use crate::backbone::{BackboneConfig, Mode, SymbolicModel};
use crate::d3pm::DiffusionConfig;
use crate::error::{NnError, Result};

pub const MAGIC: &[u8; 8] = b"SYMDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    pub epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub optimizer_steps: u64,
    /// Random streams are derived from `seed` and the step counters above.
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: BackboneConfig,
    pub diffusion: Option<DiffusionConfig>,
    pub vocab: String,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<TensorEntry>,
    pub payload_sha256: String,
}

pub struct LoadedCheckpoint {
    pub model: SymbolicModel,
    pub header: CheckpointHeader,
    pub vocab: Vocabulary,
}

impl LoadedCheckpoint {
    pub fn mode(&self) -> Mode {
        self.header.model.mode
    }

    /// Fails unless the checkpoint was trained on exactly `vocab`.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        check_vocab(&self.vocab, vocab)
    }
}

fn check_vocab(stored: &Vocabulary, expected: &Vocabulary) -> Result<()> {
    if stored.size() != expected.size() {
        return Err(NnError::VersionMismatch(format!("checkpoint vocabulary has K = {}, expected K = {}", stored.size(), expected.size())));
    }
    if stored != expected {
        return Err(NnError::VersionMismatch("checkpoint vocabulary differs from the dataset vocabulary".into()));
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, model: &SymbolicModel, diffusion: Option<&DiffusionConfig>, vocab: &Vocabulary, metadata: &TrainingMetadata) -> Result<()> {
    if model.config().vocab_size != vocab.size() {
        return Err(NnError::InvalidConfig(format!("model K = {} but vocabulary K = {}", model.config().vocab_size, vocab.size())));
    }
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, var) in model.store().all_tensors() {
        let values: Vec<f32> = var.as_tensor().flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
        payload.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        tensors.push(TensorEntry { name, shape: var.dims().to_vec(), offset });
        offset += values.len();
    }
    let header = CheckpointHeader {
        model: model.config().clone(),
        diffusion: diffusion.copied(),
        vocab: vocab.to_json(),
        metadata: metadata.clone(),
        tensors,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header).map_err(|e| NnError::InvalidConfig(e.to_string()))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&payload);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| NnError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).map_err(|e| NnError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| NnError::io(path, e))
}

fn corrupt(m: impl Into<String>) -> NnError {
    NnError::CorruptCheckpoint(m.into())
}

/// Parses and verifies the container, returning the header and payload.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| NnError::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch(format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end]).map_err(|e| corrupt(format!("header: {e}")))?;
    let payload = &bytes[header_end..];
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(corrupt(format!("payload has {} bytes, header describes {}", payload.len(), expected * 4)));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload hash mismatch"));
    }
    let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite tensor values"));
    }
    Ok((header, values))
}

/// Rebuilds the model from its config echo and restores every tensor.
pub fn load_checkpoint(path: &Path, device: &Device) -> Result<LoadedCheckpoint> {
    let (header, values) = read_checkpoint(path)?;
    let vocab = Vocabulary::from_json(&header.vocab).map_err(|e| corrupt(format!("vocabulary: {e}")))?;
    if vocab.size() != header.model.vocab_size {
        return Err(NnError::VersionMismatch(format!("config says K = {}, stored vocabulary has {}", header.model.vocab_size, vocab.size())));
    }
    let model = SymbolicModel::new(header.model.clone(), 0, DType::F32, device).map_err(|e| corrupt(format!("config: {e}")))?;
    let targets = model.store().all_tensors();
    if targets.len() != header.tensors.len() {
        return Err(corrupt(format!("{} stored tensors, model has {}", header.tensors.len(), targets.len())));
    }
    for (name, var) in targets {
        let entry = header.tensors.iter().find(|t| t.name == name).ok_or_else(|| corrupt(format!("missing tensor {name}")))?;
        if entry.shape != var.dims() {
            return Err(corrupt(format!("{name}: stored shape {:?}, config implies {:?}", entry.shape, var.dims())));
        }
        let n: usize = entry.shape.iter().product();
        let data = values.get(entry.offset..entry.offset + n).ok_or_else(|| corrupt(format!("{name}: offset out of range")))?;
        var.set(&Tensor::from_slice(data, entry.shape.as_slice(), device)?)?;
    }
    Ok(LoadedCheckpoint { model, header, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Architecture;
    use symdiff_core::rng::PortableRng;

    fn model(mode: Mode, k: usize) -> SymbolicModel {
        let arch = Architecture { embed_dim: 8, heads: 2, layers: 1, ff_dim: 16, dropout: 0.1 };
        SymbolicModel::new(BackboneConfig::new(&arch, 6, k, mode, 20), 4, DType::F32, &Device::Cpu).unwrap()
    }

    fn logits(m: &SymbolicModel) -> Vec<f32> {
        let pts = m.points_tensor(&[0.1, 0.2, 0.3, -1.0, 2.0, 0.5], 1, 2).unwrap();
        let t = (m.config().mode == Mode::Diffusion).then_some(&[7usize][..]);
        m.forward(&[1, 2, 3, 0, 0, 0], 1, &pts, t, None).unwrap().flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::standard();
        for mode in [Mode::Diffusion, Mode::Autoregressive] {
            let m = model(mode, vocab.size());
            // Move the batch-norm buffers off their initial values.
            let pts = m.points_tensor(&[0.1, 0.2, 0.3, -1.0, 2.0, 0.5], 1, 2).unwrap();
            m.encode(&pts, Some(&mut PortableRng::new(0, 0))).unwrap();
            let path = dir.path().join(format!("{}.ckpt", mode.as_str()));
            let meta = TrainingMetadata { epoch: 3, best_val_loss: 0.25, seed: 9, optimizer_steps: 12, rng: "x".into() };
            save_checkpoint(&path, &m, Some(&DiffusionConfig::default()), &vocab, &meta).unwrap();
            let loaded = load_checkpoint(&path, &Device::Cpu).unwrap();
            assert_eq!(logits(&loaded.model), logits(&m));
            assert_eq!(loaded.header.metadata, meta);
            assert_eq!(loaded.mode(), mode);
            loaded.check_vocab(&vocab).unwrap();
        }
    }

    #[test]
    fn truncation_and_tampering_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::standard();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model(Mode::Diffusion, 15), None, &vocab, &TrainingMetadata::default()).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint(&path, &Device::Cpu), Err(NnError::CorruptCheckpoint(_))));
        fs::write(&path, &bytes[..30]).unwrap();
        assert!(matches!(load_checkpoint(&path, &Device::Cpu), Err(NnError::CorruptCheckpoint(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert!(matches!(load_checkpoint(&path, &Device::Cpu), Err(NnError::CorruptCheckpoint(_))));
        let mut versioned = bytes;
        versioned[8] = 2;
        fs::write(&path, &versioned).unwrap();
        assert!(matches!(load_checkpoint(&path, &Device::Cpu), Err(NnError::VersionMismatch(_))));
    }

    #[test]
    fn vocabulary_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let texts13 = ["PAD", "x1", "x2", "C", "+", "-", "*", "/", "sin", "cos", "exp", "log", "sqrt"];
        let v13 = Vocabulary::from_texts(&texts13).unwrap();
        let mut texts14 = texts13.to_vec();
        texts14.push("abs");
        let v14 = Vocabulary::from_texts(&texts14).unwrap();
        let path = dir.path().join("k13.ckpt");
        save_checkpoint(&path, &model(Mode::Diffusion, 13), None, &v13, &TrainingMetadata::default()).unwrap();
        let loaded = load_checkpoint(&path, &Device::Cpu).unwrap();
        assert!(matches!(loaded.check_vocab(&v14), Err(NnError::VersionMismatch(_))));
        assert!(save_checkpoint(&path, &model(Mode::Diffusion, 13), None, &v14, &TrainingMetadata::default()).is_err());
    }
}
