//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by any part of the pipeline.
#[derive(Debug, Error)]
pub enum GeodistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("OBJ parse error at line {line}: {msg}")]
    ObjParse { line: usize, msg: String },

    #[error("mesh has no usable faces")]
    EmptyMesh,

    #[error("mesh is degenerate (total surface area is zero)")]
    DegenerateMesh,

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },

    #[error("noise level must be positive, got {sigma}")]
    NonPositiveSigma { sigma: f64 },

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("backward requires a 1x1 scalar loss, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, iteration {iter}: loss = {loss}")]
    Divergence { epoch: usize, iter: usize, loss: f64 },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("point file parse error at line {line}: {msg}")]
    PointParse { line: usize, msg: String },

    #[error("PLY parse error: {0}")]
    PlyParse(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),
}

impl GeodistError {
    /// Attach a path to a bare i/o error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GeodistError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, GeodistError>;
