//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point is off the manifold: {0}")]
    OffManifold(String),

    #[error("vector violates tangency: {0}")]
    NotTangent(String),

    #[error("tangent norm {norm} on a sphere block is outside the injectivity radius (< pi)")]
    InjectivityRadius { norm: f64 },

    #[error("points are antipodal on a sphere block (cut locus); operation undefined there")]
    CutLocus,

    #[error("cannot retract a zero-norm sphere block onto the sphere")]
    DegenerateProjection,

    #[error(
        "state left the chart's injectivity region (tangent norm {norm} >= pi - 0.1); \
         increase num_charts"
    )]
    ChartOverflow { norm: f64 },

    #[error("pullback vector degenerate (norm < 1e-12 before normalization); diffeomorphism is near-singular at solver accuracy")]
    DegeneratePullback,

    #[error("matrix is numerically singular (condition number > {cond:.3e})")]
    Singular { cond: f64 },

    #[error("loss became non-finite at epoch {epoch}; try a smaller step size or more charts")]
    NonFiniteLoss { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("no trajectories in input")]
    EmptyInput,

    #[error("filter cutoff {cutoff} Hz must be below Nyquist {nyquist} Hz")]
    CutoffAboveNyquist { cutoff: f64, nyquist: f64 },

    #[error("demonstration goals are more than pi/2 apart on a sphere block; refusing a non-slight shift")]
    GoalsTooFarApart,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
