//! Neural components: the point-cloud encoder, the shared transformer, the
//! discrete diffusion and autoregressive objectives and samplers, training,
//! and the checkpoint container.

pub mod argen;
pub mod backbone;
pub mod checkpoint;
pub mod d3pm;
pub mod error;
pub mod generator;
pub mod params;
pub mod pointenc;
pub mod trainer;

pub use backbone::{Architecture, BackboneConfig, Mode, SymbolicModel};
pub use error::{NnError, Result};
