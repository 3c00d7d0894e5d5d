//! Latent binary-concept models, embedding/unembedding training, and
//! representation geometry.

pub mod concept_model;
pub mod data;
pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod linalg;

pub use error::{Error, Result};

/// Deterministic generator used everywhere a seed is accepted.
pub type Seeded = rand_chacha::ChaCha8Rng;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
