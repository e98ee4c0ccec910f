use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use symdiff_core::dataset::Split;
use symdiff_nn::backbone::Mode;

use crate::config::{RunConfig, StrategyKind};

#[derive(Debug, Parser)]
#[command(name = "symdiff", version, about = "Symbolic regression with a discrete diffusion generator and an autoregressive baseline")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker thread cap for data generation and scoring.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bivariate corpus.
    GenData(GenDataArgs),
    /// Train a diffusion or autoregressive generator.
    Train(TrainArgs),
    /// Predict expressions, with fitted constants, for point clouds.
    Sample(SampleArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Compare two evaluation reports side by side.
    Compare(CompareArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
        }
    }
}

fn set<T: Clone>(slot: &mut T, value: &Option<T>) {
    if let Some(v) = value {
        *slot = v.clone();
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total number of samples across all splits.
    #[arg(long = "n", alias = "n-samples")]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Train, test and validate fractions.
    #[arg(long, value_parser = parse_split, value_name = "TRAIN,TEST,VALIDATE")]
    pub split: Option<(f64, f64, f64)>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub x_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub const_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub const_max: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub max_abs_y: Option<f64>,
    #[arg(long)]
    pub max_point_rejections: Option<usize>,
}

impl GenDataArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        let d = &mut c.data;
        set(&mut d.seed, &self.seed);
        set(&mut d.n_samples, &self.n_samples);
        set(&mut d.n_points, &self.n_points);
        set(&mut d.split, &self.split);
        set(&mut d.max_depth, &self.max_depth);
        set(&mut d.x_range.0, &self.x_min);
        set(&mut d.x_range.1, &self.x_max);
        set(&mut d.const_range.0, &self.const_min);
        set(&mut d.const_range.1, &self.const_max);
        set(&mut d.max_len, &self.max_len);
        set(&mut d.max_abs_y, &self.max_abs_y);
        set(&mut d.max_point_rejections, &self.max_point_rejections);
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Diffusion steps T.
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    /// Weight of the auxiliary cross-entropy term.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub plateau_factor: Option<f64>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
}

fn parse_split(s: &str) -> Result<(f64, f64, f64), String> {
    let parts = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<Vec<_>, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(format!("expected three comma-separated fractions, got {}", parts.len())),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

impl TrainArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.seed, &self.seed);
        let m = &mut c.model;
        set(&mut m.embed_dim, &self.model.embed_dim);
        set(&mut m.heads, &self.model.heads);
        set(&mut m.layers, &self.model.layers);
        set(&mut m.ff_dim, &self.model.ff_dim);
        set(&mut m.dropout, &self.model.dropout);
        let d = &mut c.diffusion;
        set(&mut d.timesteps, &self.schedule.timesteps);
        set(&mut d.beta_min, &self.schedule.beta_min);
        set(&mut d.beta_max, &self.schedule.beta_max);
        set(&mut d.lambda, &self.schedule.lambda);
        let t = &mut c.train;
        set(&mut t.learning_rate, &self.lr);
        set(&mut t.weight_decay, &self.weight_decay);
        set(&mut t.batch_size, &self.batch_size);
        set(&mut t.max_epochs, &self.epochs);
        set(&mut t.plateau_patience, &self.plateau_patience);
        set(&mut t.plateau_factor, &self.plateau_factor);
        set(&mut t.early_stop_patience, &self.early_stop_patience);
    }
}

/// Sampling and constant-fitting flags shared by `sample` and `eval`.
#[derive(Debug, Args)]
pub struct InferenceArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Reverse diffusion steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Differential-evolution generations for constant fitting.
    #[arg(long)]
    pub de_generations: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum StrategyArg {
    Greedy,
    Temperature,
}

impl InferenceArgs {
    pub fn apply(&self, c: &mut RunConfig) {
        set(&mut c.seed, &self.seed);
        let e = &mut c.eval;
        set(&mut e.batch_size, &self.batch_size);
        if self.limit.is_some() {
            e.limit = self.limit;
        }
        if self.steps.is_some() {
            e.steps = self.steps;
        }
        if let Some(s) = self.strategy {
            e.strategy = match s {
                StrategyArg::Greedy => StrategyKind::Greedy,
                StrategyArg::Temperature => StrategyKind::Temperature,
            };
        }
        set(&mut e.temperature, &self.temperature);
        set(&mut c.fit.de.generations, &self.de_generations);
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV point cloud with columns x1,x2,y.
    #[arg(long, conflicts_with = "from_split", required_unless_present = "from_split")]
    pub input: Option<PathBuf>,
    /// Dataset directory whose split supplies the point clouds.
    #[arg(long, value_name = "DATA_DIR")]
    pub from_split: Option<PathBuf>,
    #[arg(long, default_value = "validate")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score each record's own skeleton instead of a model's output.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "validate")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub inference: InferenceArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `report.json` or the directory holding it.
    #[arg(long)]
    pub report_a: PathBuf,
    #[arg(long)]
    pub report_b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
