//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed score document (MusicXML or JSON score).
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    /// MusicXML element outside the supported subset.
    #[error("unsupported MusicXML feature: <{element}>")]
    Unsupported { element: String },

    /// Syllable missing from the lexicon.
    #[error("syllable not in lexicon: {syllable:?}")]
    LexiconMiss { syllable: String },

    /// Note too short to give every phoneme at least one frame.
    #[error("note {syllable:?} ({frames} frames) too short for {phonemes} phonemes")]
    DurationUnderflow { syllable: String, frames: usize, phonemes: usize },

    /// Value outside its mathematical domain (bad MIDI id, bpm <= 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor shape mismatch, naming the op and both shapes.
    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    /// Broken precondition of an internal contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN/Inf appeared in a loss or gradient.
    #[error("training divergence: {0}")]
    Divergence(String),

    /// Metric undefined on the given inputs (no voiced overlap, zero variance).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Sample does not fit the padding caps; never truncated silently.
    #[error("sample exceeds batch caps: {0}")]
    Oversize(String),

    /// Corrupt or incompatible checkpoint/dataset file.
    #[error("bad file {path}: {msg}")]
    BadFile { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn bad_file(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::BadFile { path: path.into(), msg: msg.into() }
    }
}
