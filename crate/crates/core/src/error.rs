use thiserror::Error;

/// Errors shared across the library. Every variant names the violated
/// contract so callers can surface actionable diagnostics.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} must be positive, got {value}")]
    NotPositive { what: &'static str, value: f64 },

    #[error("{what} is not finite")]
    NotFinite { what: &'static str },

    #[error("step {step} does not evenly divide {what} = {span}")]
    StepMismatch {
        what: &'static str,
        step: f64,
        span: f64,
    },

    #[error("weights must be nonnegative and sum to 1 within 1e-12 (sum = {sum})")]
    WeightsNotNormalized { sum: f64 },

    #[error("candidate index {index} out of range ({len} candidates)")]
    CandidateIndex { index: usize, len: usize },

    #[error("state left the working domain at t = {time:.6}: {detail}")]
    OutOfDomain { time: f64, detail: String },

    #[error("discount rate {lambda} must exceed the ensemble state Lipschitz constant {l}")]
    DiscountTooSmall { lambda: f64, l: f64 },

    #[error("grid of {nodes} nodes exceeds the configured cap of {cap}")]
    NodeCapExceeded { nodes: usize, cap: usize },

    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("control covers [0, {have:.6}] but the evaluation needs [0, {need:.6}]")]
    ControlTooShort { have: f64, need: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
