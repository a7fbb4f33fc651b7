//! Quantiles of the true synthetic conditional law, by Monte-Carlo or exactly.

use std::sync::Arc;

use ndarray::ArrayView1;
use rand::Rng;

use super::mlp::interpolated_quantile;
use super::{check_dim, QuantileRegressor};
use crate::error::{Error, Result};
use crate::grid::{rearrange_monotone, QuantileGrid, QuantileLevels};
use crate::rng::{seeded_stream, stream};
use crate::synthetic::{sample_y, ConditionalLaw};

/// Ignores training data. With `mc_samples > 0` each input gets its own
/// stream seeded from the model seed and the bits of `x`, so predictions are
/// deterministic; with `mc_samples = 0` quantiles come from the exact CDF.
///
/// An exact oracle may be tabulated on an even mesh over `[0, 1]`; inputs
/// then get the linear interpolation of the two neighbouring exact grids.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    levels: Vec<f64>,
    symmetry: f64,
    mc_samples: usize,
    seed: u64,
    table: Option<Arc<Vec<Vec<f64>>>>,
}

impl SyntheticOracle {
    pub fn new(levels: &QuantileLevels, symmetry: f64, mc_samples: usize, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&symmetry) {
            return Err(Error::InvalidArgument(format!(
                "symmetry must lie in [0, 1], got {symmetry}"
            )));
        }
        Ok(Self {
            levels: levels.fit_levels(),
            symmetry,
            mc_samples,
            seed,
            table: None,
        })
    }

    /// Exact oracle tabulated at `mesh` evenly spaced inputs (`mesh ≥ 2`).
    pub fn tabulated(levels: &QuantileLevels, symmetry: f64, mesh: usize) -> Result<Self> {
        if mesh < 2 {
            return Err(Error::InvalidArgument(format!("oracle mesh needs at least 2 nodes, got {mesh}")));
        }
        let mut oracle = Self::new(levels, symmetry, 0, 0)?;
        let table = (0..mesh)
            .map(|i| oracle.quantiles_at(i as f64 / (mesh - 1) as f64).map(QuantileGrid::into_values))
            .collect::<Result<Vec<_>>>()?;
        oracle.table = Some(Arc::new(table));
        Ok(oracle)
    }

    pub fn is_exact(&self) -> bool {
        self.mc_samples == 0
    }

    fn check_x(x: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidArgument(format!("oracle input must lie in [0, 1], got {x}")));
        }
        Ok(())
    }

    pub fn quantiles_at(&self, x: f64) -> Result<QuantileGrid> {
        Self::check_x(x)?;
        if let Some(table) = &self.table {
            let last = table.len() - 1;
            let pos = x * last as f64;
            let i = (pos.floor() as usize).min(last - 1);
            let w = pos - i as f64;
            let (a, b) = (&table[i], &table[i + 1]);
            return rearrange_monotone(a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect());
        }
        if self.is_exact() {
            return rearrange_monotone(ConditionalLaw::new(x, self.symmetry)?.quantiles(&self.levels)?);
        }
        let mut rng = seeded_stream(self.seed ^ x.to_bits(), stream::MODEL);
        let mut draws: Vec<f64> = (0..self.mc_samples)
            .map(|_| sample_y(x, self.symmetry, &mut rng))
            .collect();
        draws.sort_by(f64::total_cmp);
        rearrange_monotone(self.levels.iter().map(|&p| interpolated_quantile(&draws, p)).collect())
    }

    /// Monte-Carlo quantiles from a caller-supplied generator.
    pub fn sampled_quantiles<R: Rng + ?Sized>(&self, x: f64, samples: usize, rng: &mut R) -> Result<Vec<f64>> {
        Self::check_x(x)?;
        let mut draws: Vec<f64> = (0..samples).map(|_| sample_y(x, self.symmetry, rng)).collect();
        draws.sort_by(f64::total_cmp);
        Ok(self.levels.iter().map(|&p| interpolated_quantile(&draws, p)).collect())
    }
}

impl QuantileRegressor for SyntheticOracle {
    fn n_features(&self) -> usize {
        1
    }

    fn predict_row(&self, x: ArrayView1<'_, f64>) -> Result<QuantileGrid> {
        check_dim(1, x.len())?;
        self.quantiles_at(x[0])
    }
}
