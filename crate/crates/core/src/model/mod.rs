//! Multi-output quantile regressors behind one interface.
//!
//! Every model is fit on a training [`Dataset`] for a fixed set of
//! [`QuantileLevels`] and returns a non-decreasing [`QuantileGrid`] per input.

mod knn;
mod mlp;
mod oracle;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

pub use knn::KnnQuantile;
pub use mlp::{Mlp, MlpConfig, PinballMlp};
pub use oracle::SyntheticOracle;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::{QuantileGrid, QuantileLevels};

/// `τ·(y − pred)` if `y ≥ pred`, else `(1 − τ)·(pred − y)`.
pub fn pinball_loss(prediction: f64, y: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pinball level must lie in (0, 1), got {tau}"
        )));
    }
    Ok(pinball(prediction, y, tau))
}

#[inline]
pub(crate) fn pinball(prediction: f64, y: f64, tau: f64) -> f64 {
    let diff = y - prediction;
    if diff >= 0.0 {
        tau * diff
    } else {
        (tau - 1.0) * diff
    }
}

/// Mean pinball loss of `grids` against `targets` over all `levels`.
pub fn mean_pinball_loss(grids: &[QuantileGrid], targets: &[f64], levels: &[f64]) -> Result<f64> {
    if grids.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: grids.len(),
            right: targets.len(),
        });
    }
    let mut total = 0.0;
    for (grid, &y) in grids.iter().zip(targets) {
        if grid.values().len() != levels.len() {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                actual: grid.values().len(),
            });
        }
        total += grid
            .values()
            .iter()
            .zip(levels)
            .map(|(&q, &tau)| pinball(q, y, tau))
            .sum::<f64>();
    }
    Ok(total / (grids.len() * levels.len()).max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    PinballMlp,
    KnnQuantile,
    SyntheticOracle,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::PinballMlp => "mlp",
            ModelKind::KnnQuantile => "knn",
            ModelKind::SyntheticOracle => "oracle",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" | "pinballmlp" | "pinball_mlp" => Ok(ModelKind::PinballMlp),
            "knn" | "knnquantile" | "knn_quantile" => Ok(ModelKind::KnnQuantile),
            "oracle" | "syntheticoracle" | "synthetic_oracle" => Ok(ModelKind::SyntheticOracle),
            other => Err(Error::InvalidArgument(format!("unknown model kind `{other}`"))),
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(kind: ModelKind) -> String {
        kind.to_string()
    }
}

/// Hyperparameters for every model kind; each kind reads only its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub validation_fraction: f64,
    pub neighbors: usize,
    /// Monte-Carlo draws per input for the oracle; 0 selects the exact law.
    pub mc_samples: usize,
    /// Tabulate the exact oracle on this many inputs; 0 evaluates it directly.
    pub oracle_mesh: usize,
    pub symmetry: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            learning_rate: 5e-4,
            max_epochs: 1000,
            patience: 20,
            batch_size: 64,
            dropout: 0.1,
            validation_fraction: 0.2,
            neighbors: 50,
            mc_samples: 0,
            oracle_mesh: 0,
            symmetry: 0.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_owned()));
        match kind {
            ModelKind::PinballMlp => {
                if self.hidden.contains(&0) {
                    return bad("hidden layer sizes must be positive");
                }
                if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                    return bad("learning_rate must be positive");
                }
                if self.max_epochs == 0 || self.batch_size == 0 {
                    return bad("max_epochs and batch_size must be positive");
                }
                if !(0.0..1.0).contains(&self.dropout) {
                    return bad("dropout must lie in [0, 1)");
                }
                if !(0.0..1.0).contains(&self.validation_fraction) {
                    return bad("validation_fraction must lie in [0, 1)");
                }
            }
            ModelKind::KnnQuantile => {
                if self.neighbors == 0 {
                    return bad("neighbors must be positive");
                }
            }
            ModelKind::SyntheticOracle => {
                if !(0.0..=1.0).contains(&self.symmetry) {
                    return bad("symmetry must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hyper: Hyperparameters,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, seed: u64) -> Self {
        Self {
            kind,
            hyper: Hyperparameters::default(),
            seed,
        }
    }

    pub fn with_hyper(mut self, hyper: Hyperparameters) -> Self {
        self.hyper = hyper;
        self
    }
}

/// Common prediction interface.
pub trait QuantileRegressor {
    fn n_features(&self) -> usize;

    fn predict_row(&self, x: ArrayView1<'_, f64>) -> Result<QuantileGrid>;

    fn predict_quantiles(&self, x: &[f64]) -> Result<QuantileGrid> {
        self.predict_row(ArrayView1::from(x))
    }

    fn predict_batch(&self, features: &Array2<f64>) -> Result<Vec<QuantileGrid>> {
        check_dim(self.n_features(), features.ncols())?;
        features.rows().into_iter().map(|row| self.predict_row(row)).collect()
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Fitted {
    Mlp(PinballMlp),
    Knn(KnnQuantile),
    Oracle(SyntheticOracle),
}

/// An immutable fitted model together with the spec that produced it.
#[derive(Debug, Clone)]
pub struct FittedModel {
    spec: ModelSpec,
    levels: QuantileLevels,
    inner: Fitted,
}

impl FittedModel {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn levels(&self) -> &QuantileLevels {
        &self.levels
    }

    pub fn predict_quantiles(&self, x: &[f64]) -> Result<QuantileGrid> {
        QuantileRegressor::predict_quantiles(self, x)
    }

    pub fn predict_many(&self, features: &Array2<f64>) -> Result<Vec<QuantileGrid>> {
        self.predict_batch(features)
    }

    pub fn as_mlp(&self) -> Option<&PinballMlp> {
        match &self.inner {
            Fitted::Mlp(m) => Some(m),
            _ => None,
        }
    }
}

impl QuantileRegressor for FittedModel {
    fn n_features(&self) -> usize {
        match &self.inner {
            Fitted::Mlp(m) => m.n_features(),
            Fitted::Knn(m) => m.n_features(),
            Fitted::Oracle(m) => m.n_features(),
        }
    }

    fn predict_row(&self, x: ArrayView1<'_, f64>) -> Result<QuantileGrid> {
        match &self.inner {
            Fitted::Mlp(m) => m.predict_row(x),
            Fitted::Knn(m) => m.predict_row(x),
            Fitted::Oracle(m) => m.predict_row(x),
        }
    }

    fn predict_batch(&self, features: &Array2<f64>) -> Result<Vec<QuantileGrid>> {
        match &self.inner {
            Fitted::Mlp(m) => m.predict_batch(features),
            Fitted::Knn(m) => m.predict_batch(features),
            Fitted::Oracle(m) => m.predict_batch(features),
        }
    }
}

/// Fits `spec` on `train` for the given levels.
pub fn fit(spec: &ModelSpec, train: &Dataset, levels: &QuantileLevels) -> Result<FittedModel> {
    spec.hyper.validate(spec.kind)?;
    let inner = match spec.kind {
        ModelKind::PinballMlp => {
            Fitted::Mlp(PinballMlp::fit(&MlpConfig::from_hyper(&spec.hyper), train, levels, spec.seed)?)
        }
        ModelKind::KnnQuantile => Fitted::Knn(KnnQuantile::fit(train, levels, spec.hyper.neighbors)?),
        ModelKind::SyntheticOracle if spec.hyper.mc_samples == 0 && spec.hyper.oracle_mesh > 0 => {
            Fitted::Oracle(SyntheticOracle::tabulated(levels, spec.hyper.symmetry, spec.hyper.oracle_mesh)?)
        }
        ModelKind::SyntheticOracle => Fitted::Oracle(SyntheticOracle::new(
            levels,
            spec.hyper.symmetry,
            spec.hyper.mc_samples,
            spec.seed,
        )?),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        levels: levels.clone(),
        inner,
    })
}
