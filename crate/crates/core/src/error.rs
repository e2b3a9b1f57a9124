use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A table or batch does not match the shape of the MDP it is used with.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An MDP definition violates one of its structural invariants.
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    /// The MDP is well formed but outside what the requested routine supports.
    #[error("unsupported MDP: {0}")]
    Unsupported(String),

    /// A dense linear solve hit a (numerically) singular matrix.
    #[error("singular linear system (pivot ratio {pivot_ratio:e})")]
    Singular { pivot_ratio: f64 },

    /// A grid layout could not be parsed.
    #[error("layout error at row {row}, column {col}: {message}")]
    Layout { row: usize, col: usize, message: String },

    /// Sampling from a buffer with nothing in it.
    #[error("replay buffer is empty")]
    EmptyBuffer,

    /// An input broke a documented precondition (e.g. a negative weight).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A strategy was asked to run without an input it depends on.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = core::result::Result<T, Error>;
