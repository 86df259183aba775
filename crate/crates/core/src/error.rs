use alloc::string::String;

/// Errors produced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid box [{x1}, {y1}, {x2}, {y2}]: extents must be finite and non-negative")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("embedding has a non-finite component at position {0}")]
    NonFiniteEmbedding(usize),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm embedding in {side} at index {index}")]
    ZeroNorm { side: &'static str, index: usize },
    #[error("similarity requires at least one detection and one candidate")]
    EmptySimilarity,
    #[error("batch has no positive pairs")]
    NoPositivePairs,
    #[error("optimization diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("frame index {frame} is not greater than previous frame {previous}")]
    NonMonotonicFrame { frame: u32, previous: u32 },
    #[error("undefined MOTA denominator: ground truth has no objects")]
    NoGroundTruth,
    #[error("cannot place {identities} prototypes in dimension {dim} with margin {margin} (best achieved {achieved})")]
    MarginUnreachable {
        identities: usize,
        dim: usize,
        margin: f64,
        achieved: f64,
    },
    #[error("invalid detection at index {index}: {reason}")]
    InvalidDetection { index: usize, reason: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
