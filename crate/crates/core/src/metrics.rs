//! Marginal coverage, worst-slab conditional coverage and mean set width.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSet;
use crate::error::{Error, Result};
use crate::rng::{seeded_stream, stream};

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_DIRECTIONS: usize = 1000;
/// Smallest slab, in points, considered meaningful.
pub const MIN_SLAB: usize = 10;

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

pub fn covered_flags(sets: &[PredictionSet], y: &[f64]) -> Result<Vec<bool>> {
    check_lengths(sets.len(), y.len())?;
    Ok(sets.iter().zip(y).map(|(s, &v)| s.contains(v)).collect())
}

pub fn marginal_coverage(sets: &[PredictionSet], y: &[f64]) -> Result<f64> {
    let flags = covered_flags(sets, y)?;
    Ok(fraction(&flags))
}

fn fraction(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        return f64::NAN;
    }
    flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64
}

/// Sort orders of the test features projected on random unit directions,
/// shared across methods evaluated on the same test set.
#[derive(Debug, Clone)]
pub struct SlabOrders {
    orders: Vec<Vec<usize>>,
    n: usize,
}

impl SlabOrders {
    /// Directions are standard normal vectors, normalized, drawn in sequence
    /// so that a larger `n_directions` extends a smaller one.
    pub fn new(features: &Array2<f64>, n_directions: usize, seed: u64) -> Result<Self> {
        if n_directions == 0 {
            return Err(Error::InvalidArgument("n_directions must be at least 1".into()));
        }
        let (n, d) = features.dim();
        let mut rng = seeded_stream(seed, stream::METRICS);
        let mut orders = Vec::with_capacity(n_directions);
        let mut proj = vec![0.0; n];
        for _ in 0..n_directions {
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            for (p, row) in proj.iter_mut().zip(features.rows()) {
                *p = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
            orders.push(order);
        }
        Ok(Self { orders, n })
    }

    pub fn n_directions(&self) -> usize {
        self.orders.len()
    }

    /// Worst coverage over the first `n_directions` directions.
    pub fn worst_coverage_with(&self, covered: &[bool], delta: f64, n_directions: usize) -> Result<f64> {
        check_lengths(covered.len(), self.n)?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
        }
        let m = ((delta * self.n as f64) - 1e-9).ceil().max(0.0) as usize;
        if m < MIN_SLAB {
            return Err(Error::InvalidArgument(format!(
                "slab of {m} points is below the minimum of {MIN_SLAB}"
            )));
        }
        let mut worst = usize::MAX;
        let mut prefix = vec![0usize; self.n + 1];
        for order in self.orders.iter().take(n_directions.max(1)) {
            for (i, &idx) in order.iter().enumerate() {
                prefix[i + 1] = prefix[i] + usize::from(covered[idx]);
            }
            for start in 0..=self.n - m {
                worst = worst.min(prefix[start + m] - prefix[start]);
            }
        }
        Ok(worst as f64 / m as f64)
    }

    pub fn worst_coverage(&self, covered: &[bool], delta: f64) -> Result<f64> {
        self.worst_coverage_with(covered, delta, self.orders.len())
    }
}

/// Minimum covered fraction over every contiguous run of `⌈δ·n⌉` points in
/// the order of `n_directions` random projections.
pub fn worst_slab_coverage(
    features: &Array2<f64>,
    covered: &[bool],
    delta: f64,
    n_directions: usize,
    seed: u64,
) -> Result<f64> {
    check_lengths(features.nrows(), covered.len())?;
    SlabOrders::new(features, n_directions, seed)?.worst_coverage(covered, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSummary {
    pub mean: f64,
    pub unbounded: usize,
}

/// Mean total width. Sets unbounded on either side count as `fallback`
/// (the observed response range) and are tallied separately.
pub fn mean_width(sets: &[PredictionSet], fallback: f64) -> WidthSummary {
    let mut unbounded = 0;
    let total: f64 = sets
        .iter()
        .map(|s| {
            if s.is_bounded() {
                s.bounded_width()
            } else {
                unbounded += 1;
                fallback
            }
        })
        .sum();
    WidthSummary {
        mean: if sets.is_empty() { f64::NAN } else { total / sets.len() as f64 },
        unbounded,
    }
}

/// `max − min` of the responses.
pub fn response_range(y: &[f64]) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if y.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// One method on one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub marginal: f64,
    pub conditional: f64,
    pub width: f64,
    pub unbounded_count: usize,
    pub time_per_sample: f64,
}

impl MetricRow {
    pub fn evaluate(
        sets: &[PredictionSet],
        y: &[f64],
        slabs: &SlabOrders,
        delta: f64,
        time_per_sample: f64,
    ) -> Result<Self> {
        let flags = covered_flags(sets, y)?;
        let width = mean_width(sets, response_range(y));
        Ok(Self {
            marginal: fraction(&flags),
            conditional: slabs.worst_coverage(&flags, delta)?,
            width: width.mean,
            unbounded_count: width.unbounded,
            time_per_sample,
        })
    }
}
