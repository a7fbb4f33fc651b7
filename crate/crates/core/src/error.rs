use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value {value} at position {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("quantile grid is not non-decreasing at position {index}")]
    NotMonotone { index: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("feature dimension mismatch: model expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(
        "calibration infeasible: rank {rank} exceeds {n_cal} calibration points at alpha = {alpha}"
    )]
    InfeasibleCalibration { rank: usize, n_cal: usize, alpha: f64 },

    #[error("calibration result is for {actual}, expected {expected}")]
    MethodMismatch { expected: String, actual: String },

    #[error("degenerate quantile grid: lower and upper support coincide at {0}")]
    DegenerateGrid(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("infeasible split: requested {requested} rows from a dataset of {available}")]
    InfeasibleSplit { requested: usize, available: usize },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("empty file: {}", .0.display())]
    EmptyFile(PathBuf),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
