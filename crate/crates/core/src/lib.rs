//! Risk prediction from short pre-operative procedure notes.
//!
//! The crate covers the whole ladder: synthetic corpora with planted signal,
//! static word-embedding baselines, a small from-scratch transformer (encoder
//! and decoder variants with exact gradients), four fine-tuning strategies,
//! downstream predictors, metrics with nested cross-validation, and probes.

pub mod baselines;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod predict;
pub mod probe;
pub mod seed;
pub mod tensor;
pub mod text;
pub mod transformer;

pub use error::{Error, Result};

/// Version string embedded in every artifact's provenance.
pub const TOOL_VERSION: &str = concat!("periloom ", env!("CARGO_PKG_VERSION"));
