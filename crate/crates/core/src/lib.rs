//! Two-channel diffusion imputation for mixed-type tabular data.
//!
//! Continuous columns are imputed by a conditional noise-prediction diffusion
//! model sampled with deterministic DDIM updates; categorical and ordinal
//! columns by a diffusion process that moves probability vectors toward the
//! uniform distribution and back, so every intermediate state stays on its
//! simplex. Both channels are trained together from incomplete data by
//! masking a share of the observed cells and learning to recover them.

pub mod continuous;
pub mod denoiser;
pub mod discrete;
pub mod encode;
pub mod error;
pub mod eval;
pub mod imputer;
pub mod missingness;
pub mod nn;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
pub use eval::{MetricReport, Task};
pub use imputer::{Checkpoint, ImputeOptions, Supervision, TrainConfig};
pub use missingness::{Mechanism, MechanismSpec};
pub use table::{Column, ColumnKind, FeatureSchema, Mask, MaskedTable};
pub use ndarray;
