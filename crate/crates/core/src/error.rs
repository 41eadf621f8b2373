use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants map onto the CLI exit codes: validation-style failures exit with 2,
/// numeric failures with 3 (see [`GeomemError::exit_code`]).
#[derive(Debug, Error)]
pub enum GeomemError {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("node {node} has no neighbours (degenerate degree)")]
    DegenerateDegree { node: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:.3e})")]
    Symmetry { max_asymmetry: f64 },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("loss mask selects no positions")]
    DegenerateLoss,

    #[error("non-finite value encountered at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("operation `{op}` does not support topology {topology}")]
    UnsupportedTopology { op: &'static str, topology: String },

    #[error("token {token} out of range for vocabulary of size {vocab}")]
    Vocab { token: usize, vocab: usize },

    #[error("sequence of length {len} exceeds context length {context}")]
    Length { len: usize, context: usize },

    #[error("embedding of node {node} has zero norm")]
    DegenerateVector { node: usize },

    #[error("arm {arm} has fewer than 2 non-root nodes")]
    DegenerateArm { arm: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GeomemError {
    pub fn param(field: &'static str, reason: impl Into<String>) -> Self {
        GeomemError::Parameter {
            field,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the `geomem` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            GeomemError::Numeric { .. } => 3,
            GeomemError::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = GeomemError> = std::result::Result<T, E>;
