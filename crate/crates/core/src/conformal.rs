//! Split-conformal calibration and prediction for CIR, CIR+ and the
//! non-unimodal rank variant.
//!
//! Calibration ranks the scores of the calibration points and keeps the
//! `r_α = ⌈(1 − α)(1 + n_cal)⌉`-th smallest as the threshold. Prediction
//! inverts the score: the returned set for `x` is exactly
//! `{y : s(x, y) ≤ threshold}`. Ties at the threshold are kept as they are.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;
use crate::interquantile::{
    check_alpha, cir_score, cir_score_with_rate, cirplus_score, greedy_step, greedy_window,
    multimodal_rank_score, width_ranks, CirPlusScore, CirScore, WidthScale,
};
use crate::model::FittedModel;

/// Half-open interval `(lo, hi]`. Infinite ends mark an unbounded side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lo: f64,
    pub hi: f64,
}

impl PredictionInterval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(hi >= lo, "interval ({lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    #[inline]
    pub fn contains(&self, y: f64) -> bool {
        y > self.lo && y <= self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// `hi − lo`; infinite when unbounded.
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_subset_of(&self, other: &PredictionInterval) -> bool {
        self.hi <= self.lo || (other.lo <= self.lo && self.hi <= other.hi)
    }
}

/// Sorted union of disjoint half-open intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    intervals: Vec<PredictionInterval>,
}

impl PredictionSet {
    pub fn single(interval: PredictionInterval) -> Self {
        Self {
            intervals: vec![interval],
        }
    }

    pub fn unbounded() -> Self {
        Self::single(PredictionInterval::unbounded())
    }

    /// Sorts, drops empty pieces and merges touching or overlapping ones.
    pub fn from_intervals(mut pieces: Vec<PredictionInterval>) -> Self {
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let fallback = pieces.first().copied();
        let mut merged: Vec<PredictionInterval> = Vec::with_capacity(pieces.len());
        for piece in pieces.into_iter().filter(|p| p.hi > p.lo) {
            match merged.last_mut() {
                Some(last) if piece.lo <= last.hi => last.hi = last.hi.max(piece.hi),
                _ => merged.push(piece),
            }
        }
        if merged.is_empty() {
            // all pieces empty: keep one degenerate interval so the set is well formed
            merged.push(fallback.unwrap_or(PredictionInterval::new(0.0, 0.0)));
        }
        Self { intervals: merged }
    }

    pub fn intervals(&self) -> &[PredictionInterval] {
        &self.intervals
    }

    pub fn contains(&self, y: f64) -> bool {
        self.intervals.iter().any(|iv| iv.contains(y))
    }

    pub fn is_bounded(&self) -> bool {
        self.intervals.iter().all(PredictionInterval::is_bounded)
    }

    /// Sum of the bounded pieces' widths.
    pub fn bounded_width(&self) -> f64 {
        self.intervals
            .iter()
            .filter(|iv| iv.is_bounded())
            .map(PredictionInterval::width)
            .sum()
    }

    /// Every point of `self` lies in `other`.
    pub fn is_subset_of(&self, other: &PredictionSet) -> bool {
        self.intervals.iter().filter(|iv| iv.hi > iv.lo).all(|iv| {
            other
                .intervals
                .iter()
                .any(|o| o.lo <= iv.lo && iv.hi <= o.hi)
        })
    }
}

impl From<PredictionInterval> for PredictionSet {
    fn from(interval: PredictionInterval) -> Self {
        Self::single(interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConformalMethod {
    Cir,
    CirPlus,
    CirMultimodal,
}

impl ConformalMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cir => "CIR",
            Self::CirPlus => "CIR+",
            Self::CirMultimodal => "CIR-multimodal",
        }
    }
}

impl fmt::Display for ConformalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConformalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cir" => Ok(Self::Cir),
            "cir+" | "cirplus" | "cir_plus" => Ok(Self::CirPlus),
            "cir-multimodal" | "cirmultimodal" | "multimodal" => Ok(Self::CirMultimodal),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Threshold and the constants frozen at calibration time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: ConformalMethod,
    /// `k̂` (CIR), `ŝ` (CIR+) or the rank cutoff (multimodal).
    pub threshold: f64,
    pub alpha: f64,
    pub num_intervals: usize,
    /// `c`, CIR+ only.
    pub scale: Option<WidthScale>,
    pub n_cal: usize,
}

/// `r_α = ⌈(1 − α)(1 + n_cal)⌉`, rejected when it exceeds `n_cal`.
pub fn calibration_rank(alpha: f64, n_cal: usize) -> Result<usize> {
    check_alpha(alpha)?;
    if n_cal == 0 {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    }
    let exact = (1.0 - alpha) * (n_cal as f64 + 1.0);
    // guard against products like 90.00000000000001
    let rank = (exact - 1e-9 * exact.max(1.0)).ceil().max(1.0) as usize;
    if rank > n_cal {
        return Err(Error::InfeasibleCalibration { rank, n_cal, alpha });
    }
    Ok(rank)
}

/// The `rank`-th smallest value (1-based) under a total order.
pub fn order_statistic<T: Copy>(values: &[T], rank: usize, cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> T {
    assert!(rank >= 1 && rank <= values.len(), "rank {rank} out of range");
    let mut scratch = values.to_vec();
    let (_, nth, _) = scratch.select_nth_unstable_by(rank - 1, cmp);
    *nth
}

pub fn calibrate_cir(scores: &[CirScore], alpha: f64, num_intervals: usize) -> Result<CalibrationResult> {
    let rank = calibration_rank(alpha, scores.len())?;
    let k_hat = order_statistic(scores, rank, Ord::cmp);
    check_range(k_hat.value() as f64, num_intervals)?;
    Ok(CalibrationResult {
        method: ConformalMethod::Cir,
        threshold: k_hat.value() as f64,
        alpha,
        num_intervals,
        scale: None,
        n_cal: scores.len(),
    })
}

pub fn calibrate_cirplus(
    scores: &[CirPlusScore],
    alpha: f64,
    num_intervals: usize,
    scale: WidthScale,
) -> Result<CalibrationResult> {
    let rank = calibration_rank(alpha, scores.len())?;
    let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let s_hat = order_statistic(&values, rank, f64::total_cmp);
    if !(s_hat > 0.0 && s_hat <= (num_intervals + 1) as f64) {
        return Err(Error::InvalidArgument(format!(
            "CIR+ threshold {s_hat} outside (0, {}]",
            num_intervals + 1
        )));
    }
    Ok(CalibrationResult {
        method: ConformalMethod::CirPlus,
        threshold: s_hat,
        alpha,
        num_intervals,
        scale: Some(scale),
        n_cal: scores.len(),
    })
}

pub fn calibrate_multimodal(ranks: &[usize], alpha: f64, num_intervals: usize) -> Result<CalibrationResult> {
    let rank = calibration_rank(alpha, ranks.len())?;
    let cutoff = order_statistic(ranks, rank, Ord::cmp);
    check_range(cutoff as f64, num_intervals)?;
    Ok(CalibrationResult {
        method: ConformalMethod::CirMultimodal,
        threshold: cutoff as f64,
        alpha,
        num_intervals,
        scale: None,
        n_cal: ranks.len(),
    })
}

fn check_range(threshold: f64, num_intervals: usize) -> Result<()> {
    if threshold >= 1.0 && threshold <= (num_intervals + 1) as f64 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [1, {}]",
            num_intervals + 1
        )))
    }
}

fn expect_method(result: &CalibrationResult, expected: ConformalMethod) -> Result<()> {
    if result.method == expected {
        Ok(())
    } else {
        Err(Error::MethodMismatch {
            expected: expected.to_string(),
            actual: result.method.to_string(),
        })
    }
}

fn expect_grid_size(grid: &QuantileGrid, result: &CalibrationResult) -> Result<()> {
    if grid.num_intervals() == result.num_intervals {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "grid has T = {}, calibration used T = {}",
            grid.num_intervals(),
            result.num_intervals
        )))
    }
}

/// Greedy window at `k̂`; unbounded when `k̂ = T + 1`.
pub fn predict_cir(grid: &QuantileGrid, result: &CalibrationResult) -> Result<PredictionInterval> {
    expect_method(result, ConformalMethod::Cir)?;
    expect_grid_size(grid, result)?;
    let k = result.threshold as usize;
    if k > grid.num_intervals() {
        return Ok(PredictionInterval::unbounded());
    }
    let w = greedy_window(grid, k)?;
    Ok(PredictionInterval::new(w.lo, w.hi))
}

/// Inverts the CIR+ score: with `f = ⌊ŝ⌋`, returns `C_{f+1}` when
/// `f + e_{f+1} ≤ ŝ` (that is, `e_{f+1} ≤ ŝ − f`), otherwise `C_f`.
pub fn predict_cirplus(grid: &QuantileGrid, result: &CalibrationResult) -> Result<PredictionInterval> {
    expect_method(result, ConformalMethod::CirPlus)?;
    expect_grid_size(grid, result)?;
    let scale = result
        .scale
        .ok_or_else(|| Error::InvalidArgument("CIR+ calibration without width scale".into()))?;
    let t = grid.num_intervals();
    let s_hat = result.threshold;
    if s_hat >= (t + 1) as f64 {
        return Ok(PredictionInterval::unbounded());
    }
    let floor = s_hat.floor() as usize;
    // Same arithmetic as the score, `(k − 1) + e_k`, so the comparison is exact.
    let k = if floor < t {
        let next = greedy_step(grid, floor + 1)?;
        if floor as f64 + scale.rescale(next.added_width) <= s_hat {
            floor + 1
        } else {
            floor
        }
    } else {
        floor
    };
    let k = if k == 0 {
        log::warn!("CIR+ threshold {s_hat} below e_1; returning the first window");
        1
    } else {
        k
    };
    let w = greedy_window(grid, k)?;
    Ok(PredictionInterval::new(w.lo, w.hi))
}

/// Union of the intervals whose width rank is at most the cutoff.
pub fn predict_multimodal(grid: &QuantileGrid, result: &CalibrationResult) -> Result<PredictionSet> {
    expect_method(result, ConformalMethod::CirMultimodal)?;
    expect_grid_size(grid, result)?;
    let cutoff = result.threshold as usize;
    if cutoff > grid.num_intervals() {
        return Ok(PredictionSet::unbounded());
    }
    let q = grid.values();
    let pieces = width_ranks(grid)
        .into_iter()
        .enumerate()
        .filter(|&(_, rank)| rank <= cutoff)
        .map(|(i, _)| PredictionInterval::new(q[i], q[i + 1]))
        .collect();
    Ok(PredictionSet::from_intervals(pieces))
}

/// Knobs shared by the three CIR variants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplitOptions {
    /// Greedy fast-forward rate in `[0, 1]`; `0` disables it.
    pub rate: f64,
    /// `c` for CIR+, fixed from the training split.
    pub scale: Option<WidthScale>,
}

/// Calibration plus prediction on precomputed grids.
#[derive(Debug, Clone)]
pub struct ConformalOutput {
    pub calibration: CalibrationResult,
    pub sets: Vec<PredictionSet>,
    /// Wall-clock of scoring, thresholding and predicting, divided by
    /// `n_cal + n_test`.
    pub seconds_per_sample: f64,
}

pub fn conformalize(
    method: ConformalMethod,
    cal_grids: &[QuantileGrid],
    cal_targets: &[f64],
    test_grids: &[QuantileGrid],
    alpha: f64,
    options: SplitOptions,
) -> Result<ConformalOutput> {
    if cal_grids.len() != cal_targets.len() {
        return Err(Error::LengthMismatch {
            left: cal_grids.len(),
            right: cal_targets.len(),
        });
    }
    let Some(first) = cal_grids.first() else {
        return Err(Error::InvalidArgument("empty calibration set".into()));
    };
    check_alpha(alpha)?;
    let t = first.num_intervals();
    let start = Instant::now();
    let (calibration, sets) = match method {
        ConformalMethod::Cir => {
            let scores = cal_grids
                .iter()
                .zip(cal_targets)
                .map(|(g, &y)| {
                    if options.rate > 0.0 {
                        cir_score_with_rate(g, y, options.rate, alpha)
                    } else {
                        Ok(cir_score(g, y))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let calibration = calibrate_cir(&scores, alpha, t)?;
            let sets = test_grids
                .iter()
                .map(|g| predict_cir(g, &calibration).map(PredictionSet::single))
                .collect::<Result<Vec<_>>>()?;
            (calibration, sets)
        }
        ConformalMethod::CirPlus => {
            let scale = options
                .scale
                .ok_or_else(|| Error::InvalidArgument("CIR+ needs a width scale".into()))?;
            let scores: Vec<CirPlusScore> = cal_grids
                .iter()
                .zip(cal_targets)
                .map(|(g, &y)| cirplus_score(g, y, scale))
                .collect();
            let calibration = calibrate_cirplus(&scores, alpha, t, scale)?;
            let sets = test_grids
                .iter()
                .map(|g| predict_cirplus(g, &calibration).map(PredictionSet::single))
                .collect::<Result<Vec<_>>>()?;
            (calibration, sets)
        }
        ConformalMethod::CirMultimodal => {
            let ranks: Vec<usize> = cal_grids
                .iter()
                .zip(cal_targets)
                .map(|(g, &y)| multimodal_rank_score(g, y))
                .collect();
            let calibration = calibrate_multimodal(&ranks, alpha, t)?;
            let sets = test_grids
                .iter()
                .map(|g| predict_multimodal(g, &calibration))
                .collect::<Result<Vec<_>>>()?;
            (calibration, sets)
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    Ok(ConformalOutput {
        calibration,
        sets,
        seconds_per_sample: elapsed / (cal_grids.len() + test_grids.len()) as f64,
    })
}

/// End-to-end split conformal: predict grids for the calibration and test
/// inputs, calibrate, and build one prediction set per test row.
pub fn run_split_conformal(
    model: &FittedModel,
    cal: &Dataset,
    test_features: &ndarray::Array2<f64>,
    method: ConformalMethod,
    alpha: f64,
    options: SplitOptions,
) -> Result<ConformalOutput> {
    let cal_grids = model.predict_many(cal.features())?;
    let test_grids = model.predict_many(test_features)?;
    conformalize(method, &cal_grids, cal.targets(), &test_grids, alpha, options)
}
