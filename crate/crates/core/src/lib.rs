//! Spiking neural network training with temporal and spatial
//! self-distillation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`spiking`]: leaky integrate-and-fire dynamics with a rectangular
//!   surrogate gradient.
//! - [`model`]: staged convolutional spiking networks with a weak
//!   classifier tap.
//! - [`distill`]: task, temporal-distillation and spatial-distillation
//!   losses.
//! - [`train`]: momentum SGD, step schedule, training loop and evaluation.
//! - [`data`]: IDX and event-stream ingestion, augmentation, synthetic sets.
//! - [`analysis`]: risk estimators, firing-rate maps and early exit.
//! - [`config`] and [`checkpoint`]: key-value configs and tensor archives.
//! - [`diagnostics`]: finite-difference gradient checks.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod distill;
pub mod error;
pub mod model;
pub mod rng;
pub mod spiking;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
