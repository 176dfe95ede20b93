//! Joint liver/lesion segmentation with a hybrid CNN + windowed-transformer
//! network, runnable end to end on synthetic 3D phantoms.
//!
//! The crate is organized bottom-up:
//! - [`tensor`]: dense tensors with reverse-mode autodiff (f32/f64)
//! - [`swin`]: window partitioning, (shifted-)window attention, SWIN blocks
//! - [`model`]: the full encoder/bottleneck/decoder network
//! - [`preprocess`] / [`augment`]: volume preprocessing and offline augmentation
//! - [`metrics`] / [`lesion`]: Dice, Hausdorff, per-lesion stratification
//! - [`phantom`]: deterministic synthetic abdominal volumes
//! - [`train`]: losses, optimizers, cross-validation, ablations
//!
//! Determinism is a hard contract throughout: fixed seeds produce
//! bit-identical tensors, weight files, and reports, regardless of the
//! worker count.

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Result, SwtrError};
