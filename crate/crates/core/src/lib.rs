//! Conformal interquantile regression.
//!
//! A quantile regressor predicts a grid of `T + 1` conditional quantiles per
//! input. The conformity score of `(x, y)` counts how many greedy, nested,
//! adjacent interquantile intervals are needed to reach `y`; split-conformal
//! calibration of that count gives prediction intervals with finite-sample
//! marginal coverage. CQR and a histogram baseline share the same back-end.

pub mod baselines;
pub mod bench;
pub mod conformal;
pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod interquantile;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synthetic;

pub use conformal::{
    calibration_rank, ConformalMethod, CalibrationResult, PredictionInterval, PredictionSet,
};
pub use data::Dataset;
pub use error::{Error, Result};
pub use grid::{rearrange_monotone, QuantileGrid, QuantileLevels};
pub use model::{fit, FittedModel, ModelKind, ModelSpec, QuantileRegressor};
