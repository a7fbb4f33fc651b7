//! Conformalized quantile regression on two fixed levels of the grid.

use serde::{Deserialize, Serialize};

use crate::conformal::{calibration_rank, order_statistic, PredictionInterval};
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;
use crate::interquantile::check_alpha;

/// Grid indices nearest to levels `α/2` and `1 − α/2`.
pub fn cqr_indices(num_intervals: usize, alpha: f64) -> Result<(usize, usize)> {
    check_alpha(alpha)?;
    let t = num_intervals as f64;
    let lo = (0.5 * alpha * t).round() as usize;
    let hi = ((1.0 - 0.5 * alpha) * t).round() as usize;
    let (lo, hi) = (lo.min(num_intervals), hi.min(num_intervals));
    if lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "T = {num_intervals} is too coarse for CQR at alpha = {alpha}"
        )));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqrCalibration {
    /// Conformal offset `Q`, possibly negative.
    pub q_offset: f64,
    pub lo_index: usize,
    pub hi_index: usize,
    pub lo_level: f64,
    pub hi_level: f64,
    pub alpha: f64,
    pub n_cal: usize,
}

#[inline]
pub(crate) fn score_at(grid: &QuantileGrid, y: f64, lo: usize, hi: usize) -> f64 {
    let q = grid.values();
    (q[lo] - y).max(y - q[hi])
}

/// `max(q̂_lo − y, y − q̂_hi)`; negative strictly inside.
pub fn cqr_score(grid: &QuantileGrid, y: f64, alpha: f64) -> Result<f64> {
    let (lo, hi) = cqr_indices(grid.num_intervals(), alpha)?;
    Ok(score_at(grid, y, lo, hi))
}

pub fn cqr_calibrate(grids: &[QuantileGrid], targets: &[f64], alpha: f64) -> Result<CqrCalibration> {
    if grids.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: grids.len(),
            right: targets.len(),
        });
    }
    let first = grids
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty calibration set".into()))?;
    let t = first.num_intervals();
    let (lo, hi) = cqr_indices(t, alpha)?;
    let rank = calibration_rank(alpha, grids.len())?;
    let scores: Vec<f64> = grids.iter().zip(targets).map(|(g, &y)| score_at(g, y, lo, hi)).collect();
    Ok(CqrCalibration {
        q_offset: order_statistic(&scores, rank, f64::total_cmp),
        lo_index: lo,
        hi_index: hi,
        lo_level: lo as f64 / t as f64,
        hi_level: hi as f64 / t as f64,
        alpha,
        n_cal: grids.len(),
    })
}

/// `(q̂_lo − Q, q̂_hi + Q]`, collapsed to its midpoint if `Q` crosses the ends.
pub fn cqr_predict(grid: &QuantileGrid, calibration: &CqrCalibration) -> PredictionInterval {
    let q = grid.values();
    let (lo, hi) = (
        q[calibration.lo_index] - calibration.q_offset,
        q[calibration.hi_index] + calibration.q_offset,
    );
    if lo > hi {
        let mid = 0.5 * (lo + hi);
        PredictionInterval::new(mid, mid)
    } else {
        PredictionInterval::new(lo, hi)
    }
}
