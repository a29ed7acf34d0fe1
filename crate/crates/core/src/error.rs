use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PoseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("invalid skeleton: {0}")]
    InvalidTree(String),

    #[error("image too small: {width}x{height} with cell size {cell_size}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        cell_size: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("filter length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate symbol set: every classifier was pruned")]
    DegenerateSymbolSet,

    #[error("non-concave deformation: quadratic weight {0} > -0.01")]
    NonConcave(f64),

    #[error("unknown symbol pair on edge {edge}: ({parent}, {child})")]
    UnknownSymbolPair {
        edge: usize,
        parent: usize,
        child: usize,
    },

    #[error("infeasible configuration: edge {edge} uses an incompatible symbol pair")]
    InfeasibleConfiguration { edge: usize },

    #[error("infeasible model: part {part} has no reachable symbol")]
    InfeasibleModel { part: usize },

    #[error("disconnected context: edge {edge} has no co-occurring symbol pair")]
    DisconnectedContext { edge: usize },

    #[error("no feasible positive example")]
    NoFeasiblePositive,

    #[error("model version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing image: {0}")]
    MissingImage(PathBuf),

    #[error("image decode error in {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("infeasible pose sampler: {0}")]
    InfeasibleSampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PoseError {
    /// Stable, machine-readable category used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            PoseError::InvalidTree(_) => "invalid-tree",
            PoseError::ImageTooSmall { .. } => "image-too-small",
            PoseError::InvalidArgument(_) => "invalid-argument",
            PoseError::LengthMismatch { .. } => "length-mismatch",
            PoseError::InsufficientSamples { .. } => "insufficient-samples",
            PoseError::DegenerateSymbolSet => "degenerate-symbol-set",
            PoseError::NonConcave(_) => "non-concave-deformation",
            PoseError::UnknownSymbolPair { .. } => "unknown-symbol-pair",
            PoseError::InfeasibleConfiguration { .. } => "infeasible-configuration",
            PoseError::InfeasibleModel { .. } => "infeasible-model",
            PoseError::DisconnectedContext { .. } => "disconnected-context",
            PoseError::NoFeasiblePositive => "no-feasible-positive",
            PoseError::VersionMismatch { .. } => "model-version-mismatch",
            PoseError::CorruptModel(_) => "corrupt-model",
            PoseError::Parse { .. } => "parse-error",
            PoseError::MissingImage(_) => "missing-image",
            PoseError::Image { .. } => "image-error",
            PoseError::InfeasibleSampler(_) => "infeasible-sampler",
            PoseError::Io(_) => "io-error",
            PoseError::Json(_) => "json-error",
        }
    }
}
