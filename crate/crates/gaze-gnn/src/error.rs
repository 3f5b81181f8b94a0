//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Shape errors always name the
//! offending operation and both shapes so a failure deep inside a forward pass
//! is diagnosable without a debugger.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands whose shapes must agree (or be scalar-vs-tensor) do not.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single operand has a shape the operation cannot accept.
    #[error("invalid shape in `{op}`: {detail} (got {shape:?})")]
    InvalidShape {
        op: &'static str,
        detail: String,
        shape: Vec<usize>,
    },

    /// Operands created on different tapes were combined.
    #[error("`{op}` combined variables from different tapes")]
    TapeMismatch { op: &'static str },

    /// `backward` was called on a non-scalar output.
    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// An index argument referenced a position outside its operand.
    #[error("index {index} out of bounds for `{op}` (len {len})")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },

    /// Neighbor selection cannot produce k distinct non-self neighbors.
    #[error("k-nearest-neighbor selection needs k < n (k = {k}, n = {n})")]
    KnnInfeasible { k: usize, n: usize },

    /// A numeric argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A fixation stream was not valid CSV with the expected header.
    #[error("fixation CSV is missing the `row,col,duration_ms` header")]
    MissingGazeHeader,

    /// A fixation landed outside the frame it was declared against.
    #[error("fixation ({row}, {col}) lies outside a {height}x{width} frame")]
    FixationOutOfBounds {
        row: f64,
        col: f64,
        height: usize,
        width: usize,
    },

    /// Training produced a non-finite loss; state at the failing step is reported.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    /// A checkpoint file failed structural validation.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A config file or override could not be applied.
    #[error("config error: {0}")]
    Config(String),

    /// A dataset manifest or referenced asset was unusable.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("benchmark error: {0}")]
    Bench(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}
