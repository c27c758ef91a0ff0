//! Clothes-changing person re-identification from skeleton sequences.
//!
//! The pipeline is: skeleton videos are sliced into fixed-length segments,
//! each segment is encoded by a two-stream (joints + bones) spatio-temporal
//! graph convolution network into a descriptor, descriptors are matched
//! against a gallery, optionally refined with k-reciprocal re-ranking, and the
//! per-segment identity rankings of a query video are fused by positional
//! voting (Dowdall or Borda).

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod matching;
pub mod skeleton;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
