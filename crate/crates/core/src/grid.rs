//! Quantile levels and per-input quantile grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `T + 1` nominal levels `t / T`, `t = 0..=T`.
///
/// Levels 0 and 1 are not estimable; models fit the end points at
/// `1 / (2T)` and `1 - 1 / (2T)` instead (see [`QuantileLevels::fit_levels`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileLevels {
    num_intervals: usize,
    levels: Vec<f64>,
}

impl QuantileLevels {
    pub fn new(num_intervals: usize) -> Result<Self> {
        if num_intervals == 0 {
            return Err(Error::InvalidArgument(
                "number of interquantile intervals must be positive".into(),
            ));
        }
        let t = num_intervals as f64;
        let levels = (0..=num_intervals).map(|i| i as f64 / t).collect();
        Ok(Self {
            num_intervals,
            levels,
        })
    }

    /// `T`, the number of interquantile intervals.
    pub fn num_intervals(&self) -> usize {
        self.num_intervals
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nominal(&self) -> &[f64] {
        &self.levels
    }

    /// Offset used in place of the unattainable levels 0 and 1.
    pub fn end_offset(&self) -> f64 {
        0.5 / self.num_intervals as f64
    }

    /// Levels actually estimated: the nominal grid with its ends pulled in to
    /// `ε` and `1 - ε`, `ε = 1 / (2T)`.
    pub fn fit_levels(&self) -> Vec<f64> {
        let eps = self.end_offset();
        let mut levels = self.levels.clone();
        levels[0] = eps;
        levels[self.num_intervals] = 1.0 - eps;
        levels
    }
}

/// Sorted estimated conditional quantiles `q̂_0 ≤ … ≤ q̂_T` for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    values: Vec<f64>,
}

impl QuantileGrid {
    /// Wraps an already sorted grid, rejecting non-finite or decreasing entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "a quantile grid needs at least two entries".into(),
            ));
        }
        check_finite(&values)?;
        if let Some(index) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NotMonotone { index: index + 1 });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `T`.
    pub fn num_intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn lower(&self) -> f64 {
        self.values[0]
    }

    pub fn upper(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Whether `y` lies in the estimated support `(q̂_0, q̂_T]`.
    pub fn in_support(&self, y: f64) -> bool {
        y > self.lower() && y <= self.upper()
    }

    /// Width of interval `I_{i+1} = (q̂_i, q̂_{i+1}]` (zero-based `i`).
    #[inline]
    pub fn width(&self, i: usize) -> f64 {
        self.values[i + 1] - self.values[i]
    }

    /// Zero-based index of the interquantile interval containing `y`, if any.
    pub fn interval_containing(&self, y: f64) -> Option<usize> {
        if !self.in_support(y) {
            return None;
        }
        // first t with q_t >= y; then y ∈ (q_{t-1}, q_t]
        let t = self.values.partition_point(|&q| q < y);
        Some(t - 1)
    }

    /// Applies `y ↦ a·y + b` to every entry. `a` must be positive.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            values: self.values.iter().map(|&q| a * q + b).collect(),
        }
    }
}

/// Repairs quantile crossing by sorting.
pub fn rearrange_monotone(mut raw: Vec<f64>) -> Result<QuantileGrid> {
    check_finite(&raw)?;
    raw.sort_by(f64::total_cmp);
    QuantileGrid::new(raw)
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levels_are_uniform_with_pulled_in_ends() {
        let levels = QuantileLevels::new(4).unwrap();
        assert_eq!(levels.nominal(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(levels.fit_levels(), vec![0.125, 0.25, 0.5, 0.75, 0.875]);
        assert!(QuantileLevels::new(0).is_err());
    }

    #[test]
    fn rearrangement_sorts() {
        assert_eq!(rearrange_monotone(vec![1.0, 2.0, 3.0]).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(rearrange_monotone(vec![3.0, 1.0, 2.0]).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(rearrange_monotone(vec![3.0, 2.0, 4.0]).unwrap().values(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn rearrangement_rejects_nan() {
        assert!(matches!(
            rearrange_monotone(vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            QuantileGrid::new(vec![0.0, 2.0, 1.0]),
            Err(Error::NotMonotone { index: 2 })
        ));
    }

    #[test]
    fn containing_interval_is_half_open() {
        let g = QuantileGrid::new(vec![0.0, 1.0, 1.0, 3.0]).unwrap();
        assert_eq!(g.interval_containing(0.0), None);
        assert_eq!(g.interval_containing(0.5), Some(0));
        assert_eq!(g.interval_containing(1.0), Some(0));
        assert_eq!(g.interval_containing(1.5), Some(2));
        assert_eq!(g.interval_containing(3.0), Some(2));
        assert_eq!(g.interval_containing(3.1), None);
    }

    proptest! {
        #[test]
        fn rearrangement_is_idempotent(raw in prop::collection::vec(-1e6f64..1e6, 2..50)) {
            let once = rearrange_monotone(raw).unwrap();
            let twice = rearrange_monotone(once.values().to_vec()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
