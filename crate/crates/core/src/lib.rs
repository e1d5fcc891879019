//! Layer-wise probing of frozen speech-representation features.
//!
//! Feature records hold every hidden layer of a frozen extractor for one
//! utterance. Small classifier heads are trained on one layer at a time (or
//! on a learned mixture of all layers) under a speaker-independent split, and
//! the resulting per-layer accuracy curves are reduced to best-layer tables
//! and error-reduction figures.

pub mod catalog;
pub mod error;
pub mod features;
pub mod heads;
pub mod nn;
pub mod orchestrator;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
