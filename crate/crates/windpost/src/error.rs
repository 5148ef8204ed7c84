//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by dataset handling, model fitting, scoring and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing variable {0} in forecast case")]
    MissingVariable(String),
    #[error("patch of side {side} exceeds grid {nx}x{ny} at station offset ({ix},{iy})")]
    PatchOutOfBounds {
        side: usize,
        nx: usize,
        ny: usize,
        ix: usize,
        iy: usize,
    },
    #[error("fold layout violation: {0}")]
    FoldGapViolation(String),
    #[error("configuration error: {0}")]
    ConfigError(String),
    #[error("format error in {file}: {message}")]
    FormatError { file: String, message: String },
    #[error("numerics error: {0}")]
    NumericsError(String),
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("skill score undefined: reference score is zero")]
    UndefinedSkill,
    #[error("case sets are not aligned: {0}")]
    AlignmentError(String),
    #[error("design matrix is singular or rank deficient")]
    SingularDesign,
    #[error("shape mismatch in layer {layer}: {message}")]
    ShapeError { layer: String, message: String },
    #[error("invalid state: {0}")]
    StateError(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    DivergedError { epoch: usize, batch: usize },
    #[error("hyperparameter search failed: {0}")]
    SearchFailed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
