//! Run configuration: built-in defaults, then an optional TOML file, then
//! command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use symdiff_core::constfit::FitConfig;
use symdiff_core::dataset::DatasetConfig;
use symdiff_nn::argen::Strategy;
use symdiff_nn::backbone::Architecture;
use symdiff_nn::d3pm::DiffusionConfig;
use symdiff_nn::trainer::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Greedy,
    Temperature,
}

/// Sampling and scoring settings shared by `sample` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub batch_size: usize,
    /// Score only the first `limit` records.
    pub limit: Option<usize>,
    /// Reverse diffusion steps; the full schedule when unset.
    pub steps: Option<usize>,
    /// Autoregressive decoding rule.
    pub strategy: StrategyKind,
    pub temperature: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { batch_size: 64, limit: None, steps: None, strategy: StrategyKind::Greedy, temperature: 1.0 }
    }
}

impl EvalSection {
    pub fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyKind::Greedy => Strategy::Greedy,
            StrategyKind::Temperature => Strategy::Temperature(self.temperature),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CliError::usage("eval.batch_size must be at least 1"));
        }
        if self.steps == Some(0) {
            return Err(CliError::usage("eval.steps must be at least 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(CliError::usage("eval.temperature must be positive"));
        }
        Ok(())
    }
}

/// Every tunable of every command. `seed` drives training, sampling and
/// constant fitting; corpus generation uses `data.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    pub model: Architecture,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub fit: FitConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("config: {e}")))
    }

    /// Defaults overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_toml(&text).map_err(|e| CliError::usage(format!("{}: {}", p.display(), e.message)))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.model.embed_dim, c.model.heads, c.model.layers, c.model.ff_dim), (512, 8, 8, 2048));
        assert_eq!(c.model.dropout, 0.15);
        assert_eq!((c.train.learning_rate, c.train.batch_size), (1e-4, 64));
        assert_eq!((c.train.plateau_patience, c.train.plateau_factor, c.train.early_stop_patience), (5, 0.5, 15));
        assert_eq!((c.diffusion.timesteps, c.diffusion.beta_min, c.diffusion.beta_max, c.diffusion.lambda), (1000, 1e-4, 0.02, 0.01));
        assert_eq!(c.fit.de.generations, 100);
        assert_eq!(c.data.n_points, 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[model]\nembed_dims = 3").is_err());
        assert!(RunConfig::from_toml("[fit.de]\ngenerationz = 3").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::from_toml("seed = 9\n[model]\nlayers = 2\n[eval]\nstrategy = \"temperature\"").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.model.embed_dim, 512);
        assert_eq!(c.eval.strategy(), Strategy::Temperature(1.0));
    }

    #[test]
    fn serialized_config_reads_back() {
        let mut c = RunConfig::default();
        c.eval.limit = Some(5);
        c.data.split = (0.8, 0.1, 0.1);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
