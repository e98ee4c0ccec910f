use std::fs;
use std::path::{Path, PathBuf};

use crate::rng::PortableRng;
use crate::vocab::{TokenId, Vocabulary};

use super::generate::DatasetManifest;
use super::record::SampleRecord;
use super::{DatasetError, Split, VOCAB_FILE};

/// Flat, row-major batch ready to be turned into tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Record indices within the split.
    pub indices: Vec<usize>,
    /// `B x N x 3`.
    pub points: Vec<f32>,
    /// `B x S`.
    pub tokens: Vec<TokenId>,
    pub n_points: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// One split held in memory.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub path: PathBuf,
    pub records: Vec<SampleRecord>,
    pub n_points: usize,
    pub max_len: usize,
}

impl DatasetSplit {
    /// Loads `split` from a dataset directory, requiring its `vocab.json` to
    /// be byte-identical to `vocab`'s canonical form.
    pub fn open(dir: &Path, split: Split, vocab: &Vocabulary) -> Result<Self, DatasetError> {
        let manifest = DatasetManifest::read(dir)?;
        check_vocab_file(&dir.join(VOCAB_FILE), vocab)?;
        Self::load_jsonl(&dir.join(split.file_name()), manifest.config.n_points, manifest.config.max_len, vocab)
    }

    pub fn load_jsonl(path: &Path, n_points: usize, max_len: usize, vocab: &Vocabulary) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                SampleRecord::from_json_line(line, n_points, max_len, vocab.size()).map_err(|reason| {
                    DatasetError::MalformedRecord { path: path.to_path_buf(), line: i + 1, reason }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { path: path.to_path_buf(), records, n_points, max_len })
    }

    pub fn from_records(records: Vec<SampleRecord>, n_points: usize, max_len: usize) -> Self {
        Self { path: PathBuf::new(), records, n_points, max_len }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Visiting order for one epoch: identity without a seed, otherwise a
    /// shuffle drawn from stream `epoch` of `shuffle_seed`.
    pub fn epoch_order(&self, shuffle_seed: Option<u64>, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            PortableRng::new(seed, epoch).shuffle(&mut order);
        }
        order
    }

    /// Every record exactly once, in `batch_size` chunks; the last batch may be short.
    pub fn batches(&self, batch_size: usize, shuffle_seed: Option<u64>, epoch: u64) -> impl Iterator<Item = Batch> + '_ {
        assert!(batch_size > 0, "batch_size must be positive");
        let order = self.epoch_order(shuffle_seed, epoch);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |indices| self.batch(&indices))
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut points = Vec::with_capacity(indices.len() * self.n_points * 3);
        let mut tokens = Vec::with_capacity(indices.len() * self.max_len);
        for &i in indices {
            let r = &self.records[i];
            points.extend(r.points.iter().flat_map(|p| p.iter().map(|&v| v as f32)));
            tokens.extend_from_slice(r.tokens.ids());
        }
        Batch { indices: indices.to_vec(), points, tokens, n_points: self.n_points, seq_len: self.max_len }
    }
}

pub(crate) fn check_vocab_file(path: &Path, vocab: &Vocabulary) -> Result<(), DatasetError> {
    let stored = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    if stored.trim_end() != vocab.to_json() {
        return Err(DatasetError::VocabularyMismatch { path: path.to_path_buf() });
    }
    Ok(())
}
