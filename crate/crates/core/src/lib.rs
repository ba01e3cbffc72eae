//! Pitch-preserving singing voice synthesis at desk scale.
//!
//! The crate covers the full pipeline: music score parsing and phrase
//! expansion, equal-temperament pitch math, a reverse-mode autodiff engine,
//! the dual-encoder acoustic model with its pitch metric and adversarial
//! pitch classifier losses, a deterministic synthetic corpus with
//! recoverable F0, the training loop, and objective evaluation.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod pitch;
pub mod rng;
pub mod score;
pub mod train;

pub use error::{Error, Result};

/// Caps the rayon worker pool from the `PITCHFORGE_THREADS` env var.
///
/// Must run before any parallel work; later calls are no-ops.
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("PITCHFORGE_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
