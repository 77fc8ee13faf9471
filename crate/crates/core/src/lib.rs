//! Paraphrase-sensitivity analysis for vision-language model answers.

pub mod answer;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod grounding;
pub mod interchange;
pub mod interventions;
pub mod metrics;
pub mod normalizer;
pub mod sae;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
pub use exec::Exec;
