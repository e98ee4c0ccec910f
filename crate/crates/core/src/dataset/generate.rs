use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{PortableRng, RNG_NAME};
use crate::vocab::Vocabulary;

use super::record::SampleRecord;
use super::tree::{sample_expression, Expr};
use super::{DatasetConfig, DatasetError, Split, MANIFEST_FILE, VOCAB_FILE};

pub const MANIFEST_VERSION: u32 = 1;

const GENERATION_CHUNK: usize = 4096;
const MAX_EXPRESSION_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validate: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Validate => self.validate,
        }
    }

    /// Generation indices `[start, end)` belonging to a split.
    pub fn index_range(&self, split: Split) -> (usize, usize) {
        match split {
            Split::Train => (0, self.train),
            Split::Test => (self.train, self.train + self.test),
            Split::Validate => (self.train + self.test, self.train + self.test + self.validate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub counts: SplitCounts,
    pub seed: u64,
    pub rng: String,
    pub vocab_size: usize,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Json { path, message: e.to_string() })
    }
}

/// Draws `n_points` points with finite, bounded y. Each point gets
/// `max_point_rejections` redraws before the sample is discarded. A sample
/// whose y is identical at every point does not depend on x and is
/// discarded too.
pub fn sample_points(tree: &Expr, rng: &mut PortableRng, config: &DatasetConfig) -> Result<Vec<[f64; 3]>, DatasetError> {
    let (lo, hi) = config.x_range;
    let mut points = Vec::with_capacity(config.n_points);
    while points.len() < config.n_points {
        let mut rejections = 0;
        loop {
            let x1 = rng.uniform(lo, hi);
            let x2 = rng.uniform(lo, hi);
            let y = tree.eval(&[x1, x2]);
            if y.is_finite() && y.abs() <= config.max_abs_y {
                points.push([x1, x2, y]);
                break;
            }
            rejections += 1;
            if rejections >= config.max_point_rejections {
                return Err(DatasetError::SampleDiscarded);
            }
        }
    }
    if points.len() > 1 && points.iter().all(|p| p[2] == points[0][2]) {
        return Err(DatasetError::SampleDiscarded);
    }
    Ok(points)
}

/// Generates record `index` from its own RNG stream, redrawing the
/// expression whenever its points are discarded.
pub fn generate_record(index: u64, config: &DatasetConfig, vocab: &Vocabulary) -> Result<SampleRecord, DatasetError> {
    let mut rng = PortableRng::new(config.seed, index);
    for _ in 0..MAX_EXPRESSION_ATTEMPTS {
        let sampled = sample_expression(&mut rng, config, vocab);
        match sample_points(&sampled.tree, &mut rng, config) {
            Ok(points) => {
                return Ok(SampleRecord {
                    expr: vocab.detokenize(&sampled.skeleton),
                    tokens: sampled.skeleton,
                    constants: sampled.constants,
                    points,
                })
            }
            Err(DatasetError::SampleDiscarded) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(DatasetError::SampleDiscarded)
}

fn create(path: &Path) -> Result<BufWriter<File>, DatasetError> {
    File::create(path).map(BufWriter::new).map_err(|e| DatasetError::io(path, e))
}

/// Writes the three split files, `vocab.json` and `manifest.json` under
/// `out_dir`. Output bytes depend only on `config` and `vocab`.
pub fn build_dataset(config: &DatasetConfig, vocab: &Vocabulary, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| DatasetError::io(out_dir, e))?;
    let counts = config.split_counts();

    for split in Split::all() {
        let path = out_dir.join(split.file_name());
        let mut out = create(&path)?;
        let (start, end) = counts.index_range(split);
        let mut chunk_start = start;
        while chunk_start < end {
            let chunk_end = (chunk_start + GENERATION_CHUNK).min(end);
            let records = (chunk_start..chunk_end)
                .into_par_iter()
                .map(|i| generate_record(i as u64, config, vocab))
                .collect::<Result<Vec<_>, _>>()?;
            for r in &records {
                writeln!(out, "{}", r.to_json_line()).map_err(|e| DatasetError::io(&path, e))?;
            }
            chunk_start = chunk_end;
        }
        out.flush().map_err(|e| DatasetError::io(&path, e))?;
    }

    let vocab_path = out_dir.join(VOCAB_FILE);
    fs::write(&vocab_path, vocab.to_json() + "\n").map_err(|e| DatasetError::io(&vocab_path, e))?;

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        config: config.clone(),
        counts,
        seed: config.seed,
        rng: RNG_NAME.to_string(),
        vocab_size: vocab.size(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&manifest_path, text).map_err(|e| DatasetError::io(&manifest_path, e))?;
    Ok(manifest)
}
