//! Dual-encoder wavelet-frequency segmentation of volumetric CT.
//!
//! The crate is organised bottom-up:
//!
//! * [`volume`], [`phantom`]: voxel grids, the `.vvol` file format and a
//!   synthetic liver/tumor phantom generator.
//! * [`wavelet`]: single-level Haar analysis/synthesis and the low/high
//!   frequency split that feeds the two encoder branches.
//! * [`tensor`]: dense tensors, tape-based reverse-mode autodiff, AdamW.
//! * [`model`]: patch embedding, transformer or CNN encoder branches, skip
//!   projections, additive fusion and the shared decoder.
//! * [`loss`]: Dice, cross-entropy, their blend, and the Dice metric.
//! * [`sampler`], [`train`]: balanced window sampling and the training loop.
//! * [`inference`]: sliding-window prediction with overlap blending.
//! * [`config`], [`run`]: run configuration and the command-line workflows.

pub mod config;
pub mod error;
pub mod inference;
pub mod loss;
pub mod model;
pub mod phantom;
pub mod run;
pub mod sampler;
pub mod tensor;
pub mod train;
pub mod volume;
pub mod wavelet;

pub use error::{Error, ErrorClass, Result};
