//! Single-pass coarse-to-fine deformable registration of 3D volumes.
//!
//! The crate is organised bottom-up:
//!
//! * [`volumes`]: scalar volumes, label maps, NIfTI-1/raw I/O, image pyramids
//!   and synthetic phantom generation.
//! * [`field_ops`]: displacement-field algebra (warping, upsampling, addition,
//!   Jacobian determinants, folding statistics).
//! * [`losses`]: local NCC, smoothness and folding penalties, the multi-level
//!   training objective and its analytic gradient.
//! * [`nn`]: a small reverse-mode engine for 3D convolutional networks.
//! * [`model`]: the dual-path encoder / cumulative decoder network.
//! * [`training`]: pair sampling, ADAM updates, validation and checkpoints.
//! * [`eval`]: Dice, folding and runtime metrics, step-wise reports and the
//!   ablation harness.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod field_ops;
pub mod losses;
pub mod model;
pub mod nn;
pub mod report;
pub mod sampling;
pub mod training;
pub mod volumes;

pub use error::{Error, Result};
pub use field_ops::{DisplacementField, JacobianMap};
pub use losses::{LossReport, LossWeights};
pub use model::{Model, ModelConfig, RegistrationOutput};
pub use training::{TrainConfig, TrainState};
pub use volumes::{ImagePyramid, LabelMap, Real, Shape, Volume};
