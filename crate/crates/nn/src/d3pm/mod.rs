//! Discrete diffusion over token categories: schedule and transitions,
//! the hybrid training objective, and the ancestral sampler.

mod loss;
mod sampler;
mod schedule;

pub use loss::{d3pm_loss_from_logits, LossParts};
pub use sampler::{argmax, sample, timestep_ladder, Denoiser};
pub use schedule::{log_sum_exp, softmax, DiffusionConfig, NoiseSchedule, TransitionModel, LOG_FLOOR};
