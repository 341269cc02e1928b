//! Interpretable similar-case matching.
//!
//! A case pair flows through four stages: feature sentence identification
//! ([`fsi`]), three-way case matching ([`matcher`]), feature sentence
//! alignment ([`aligner`]) and conflict resolution ([`pipeline`]). The
//! [`metrics`] module scores each stage and combines them into a final score.

pub mod aligner;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fsi;
pub mod learning;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
