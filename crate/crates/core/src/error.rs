use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("graph contains a cycle")]
    Cyclic,

    #[error("exact enumeration over {m} concepts exceeds the cap of {cap}")]
    EnumerationCap { m: usize, cap: usize },

    #[error("rejection sampler would stall: acceptance probability {acceptance:.3e} is below {floor:.0e}")]
    SamplerStall { acceptance: f64, floor: f64 },

    #[error("training diverged at step {step}: loss {loss} with learning rate {learning_rate}")]
    Divergence {
        step: usize,
        loss: f64,
        learning_rate: f64,
    },

    #[error("no counterfactual pair for concept {concept} on the {side} side")]
    EmptySteeringSet { concept: usize, side: String },

    #[error("need at least two usable vectors, found {0}")]
    TooFewVectors(usize),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model is not jointly independent (max deviation {0:.3e})")]
    Dependent(f64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
