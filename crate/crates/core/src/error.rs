use thiserror::Error;

pub type Result<T, E = FdmError> = std::result::Result<T, E>;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdmError {
    #[error("edge {edge} connects vertex {vertex} to itself")]
    SelfLoop { edge: usize, vertex: usize },

    #[error("edge {edge} duplicates edge {first} (vertices {a} and {b})")]
    DuplicateEdge {
        edge: usize,
        first: usize,
        a: usize,
        b: usize,
    },

    #[error("network has no supported vertices")]
    NoSupports,

    #[error("free vertex {vertex} belongs to a connected component without supports")]
    OrphanFreeComponent { vertex: usize },

    #[error("{what} index {index} is out of range (length {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} contains a non-finite value at position {index}")]
    NonFiniteInput { what: &'static str, index: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is singular (no acceptable pivot in column {column})")]
    SingularMatrix { column: usize },

    #[error("edge {edge} has zero length but the loss depends on its length")]
    ZeroLengthEdge { edge: usize },

    #[error("loss specification has no goals")]
    EmptyLossSpec,

    #[error("invalid goal {index}: {reason}")]
    InvalidGoal { index: usize, reason: String },

    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),

    #[error("gradient contains a non-finite value")]
    NonFiniteGradient,

    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl FdmError {
    /// Stable variant name, used for structured error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            FdmError::SelfLoop { .. } => "SelfLoop",
            FdmError::DuplicateEdge { .. } => "DuplicateEdge",
            FdmError::NoSupports => "NoSupports",
            FdmError::OrphanFreeComponent { .. } => "OrphanFreeComponent",
            FdmError::IndexOutOfRange { .. } => "IndexOutOfRange",
            FdmError::DimensionMismatch { .. } => "DimensionMismatch",
            FdmError::NonFiniteInput { .. } => "NonFiniteInput",
            FdmError::InvalidMatrix(_) => "InvalidMatrix",
            FdmError::SingularMatrix { .. } => "SingularMatrix",
            FdmError::ZeroLengthEdge { .. } => "ZeroLengthEdge",
            FdmError::EmptyLossSpec => "EmptyLossSpec",
            FdmError::InvalidGoal { .. } => "InvalidGoal",
            FdmError::InvalidConfig(_) => "InvalidConfig",
            FdmError::NonFiniteGradient => "NonFiniteGradient",
            FdmError::NonFiniteLoss => "NonFiniteLoss",
            FdmError::Parse(_) => "ParseError",
            FdmError::Io { .. } => "IoError",
        }
    }

    /// True for failures of the numerics rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FdmError::SingularMatrix { .. }
                | FdmError::ZeroLengthEdge { .. }
                | FdmError::NonFiniteGradient
                | FdmError::NonFiniteLoss
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        FdmError::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
