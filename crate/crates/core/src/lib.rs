//! Multilingual multi-task text classification with language-weighted
//! adversarial training.
//!
//! The pipeline: a language recognizer scores each word by occlusion and the
//! positively scored words form a per-language lexicon. The classifier is a
//! shared encoder with per-language heads over `[sentence; descriptor]`,
//! trained with an extra adversarial pass whose embedding perturbation is
//! weighted up on lexicon words.

pub mod adversary;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod fusion;
pub mod langspec;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
