//! Error type shared by the whole crate.

use alloc::string::String;
use alloc::vec::Vec;

/// Everything that can go wrong while building or running a model.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Array extents do not line up for an operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A scalar was required (e.g. the loss fed to `backward`).
    #[error("expected scalar shape, got {shape:?}")]
    NotScalar { shape: Vec<usize> },
    /// Input outside the mathematical domain of an op (e.g. log of x <= 0).
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    /// A clip whose mask has no unmasked segment.
    #[error("empty clip: mask row {row} has no unmasked segment")]
    EmptyClip { row: usize },
    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),
    /// Class label outside the declared range.
    #[error("label {label} out of range 0..{classes}")]
    Label { label: usize, classes: usize },
    /// A clip longer than the padding target; never truncated silently.
    #[error("clip has {len} segments, exceeds maximum {max}")]
    Truncation { len: usize, max: usize },
    /// Empty or otherwise unusable dataset.
    #[error("data error: {0}")]
    Data(String),
    /// Probe training split contains fewer than two classes.
    #[error("degenerate probe: training split has a single class")]
    DegenerateProbe,
    /// Stuart-Maxwell reduced covariance is singular.
    #[error("degenerate table: reduced covariance is singular")]
    DegenerateTable,
}

pub type Result<T> = core::result::Result<T, Error>;
