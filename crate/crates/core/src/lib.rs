//! EEG-based human-robot trust recognition pipeline.
//!
//! The crate covers the full chain from raw multichannel recordings to
//! cross-validated classification reports:
//!
//! - [`dataset`]: on-disk trial storage, questionnaire-derived labels, and a
//!   deterministic synthetic generator for desk-scale verification.
//! - [`preprocess`]: common average reference, Butterworth bandpass, powerline
//!   notch, and non-overlapping 1-second epoching.
//! - [`features`]: per-band differential entropy from a 512-point
//!   Hanning-windowed spectrum.
//! - [`spatial`]: the 9x9 electrode grid mapping that turns a 64-channel
//!   feature sequence into an image-like representation.
//! - [`nn`]: a small dense tensor library with reverse-mode automatic
//!   differentiation, Adam, and a finite-difference gradient checker.
//! - [`models`]: the trust Vision Transformer (with and without the spatial
//!   representation) and the NB/KNN/SVM/CNN baselines.
//! - [`eval`]: slice-wise and trial-wise cross-validation, metrics, the
//!   experiment runner, and the spatial-representation ablation.
//! - [`config`]: run configuration, content hashing, and seed derivation.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod spatial;

pub use error::{Error, Result};
