//! Interquantile intervals and the conformity scores built on them.
//!
//! For a grid `q̂_0 ≤ … ≤ q̂_T` the interquantile intervals are
//! `I_t = (q̂_{t-1}, q̂_t]`. The greedy expansion starts at the narrowest
//! interval and repeatedly absorbs the narrower of its two neighbours, giving
//! a chain of windows `C_1 ⊂ C_2 ⊂ … ⊂ C_T`. That chain is the single
//! definition of `C_k` used for scoring and for prediction; the brute-force
//! shortest `k`-window is kept only as a reference.
//!
//! Ties always break toward the smaller index (the left neighbour).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::QuantileGrid;

/// Clamp margin keeping the rescaled width `e_k` strictly inside `(0, 1)`.
pub const E_CLAMP: f64 = 1e-9;

/// `k` consecutive interquantile intervals starting after `q̂_lower`:
/// the set `(q̂_lower, q̂_{lower+count}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalWindow {
    pub lower: usize,
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl IntervalWindow {
    fn from_grid(grid: &QuantileGrid, lower: usize, count: usize) -> Self {
        let q = grid.values();
        Self {
            lower,
            count,
            lo: q[lower],
            hi: q[lower + count],
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn upper(&self) -> usize {
        self.lower + self.count
    }

    #[inline]
    pub fn contains(&self, y: f64) -> bool {
        y > self.lo && y <= self.hi
    }

    /// Index containment of the covered interquantile intervals.
    pub fn includes(&self, other: &IntervalWindow) -> bool {
        self.lower <= other.lower && other.upper() <= self.upper()
    }
}

/// One step of the greedy expansion: the window after absorbing an interval,
/// and the width of the interval absorbed (for `k = 1`, the seed interval).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyStep {
    pub window: IntervalWindow,
    pub added_width: f64,
}

/// Iterator over the greedy nested windows `C_1, …, C_T` of a grid.
#[derive(Debug, Clone)]
pub struct GreedySteps<'a> {
    grid: &'a QuantileGrid,
    // covered zero-based intervals are start..end
    start: usize,
    end: usize,
}

impl<'a> GreedySteps<'a> {
    pub fn new(grid: &'a QuantileGrid) -> Self {
        Self {
            grid,
            start: 0,
            end: 0,
        }
    }
}

impl Iterator for GreedySteps<'_> {
    type Item = GreedyStep;

    fn next(&mut self) -> Option<GreedyStep> {
        let grid = self.grid;
        let t = grid.num_intervals();
        let added_width;
        if self.end == 0 {
            let mut best = 0;
            let mut best_width = grid.width(0);
            for i in 1..t {
                let w = grid.width(i);
                if w < best_width {
                    best = i;
                    best_width = w;
                }
            }
            self.start = best;
            self.end = best + 1;
            added_width = best_width;
        } else {
            let left = (self.start > 0).then(|| grid.width(self.start - 1));
            let right = (self.end < t).then(|| grid.width(self.end));
            match (left, right) {
                (Some(l), Some(r)) if l <= r => {
                    self.start -= 1;
                    added_width = l;
                }
                (Some(l), None) => {
                    self.start -= 1;
                    added_width = l;
                }
                (_, Some(r)) => {
                    self.end += 1;
                    added_width = r;
                }
                (None, None) => return None,
            }
        }
        Some(GreedyStep {
            window: IntervalWindow::from_grid(grid, self.start, self.end - self.start),
            added_width,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.grid.num_intervals() - (self.end - self.start);
        (left, Some(left))
    }
}

impl ExactSizeIterator for GreedySteps<'_> {}

/// The chain `C_1 ⊂ … ⊂ C_T` materialised; `get(k)` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedWindowSequence {
    windows: Vec<IntervalWindow>,
}

impl NestedWindowSequence {
    pub fn get(&self, k: usize) -> Option<&IntervalWindow> {
        k.checked_sub(1).and_then(|i| self.windows.get(i))
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, IntervalWindow> {
        self.windows.iter()
    }
}

/// Widths `q̂_t − q̂_{t−1}` for `t = 1..=T`.
pub fn interval_widths(grid: &QuantileGrid) -> Vec<f64> {
    grid.values().windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn greedy_nested_windows(grid: &QuantileGrid) -> NestedWindowSequence {
    NestedWindowSequence {
        windows: GreedySteps::new(grid).map(|s| s.window).collect(),
    }
}

/// The greedy step producing `C_k`, `1 ≤ k ≤ T`.
pub fn greedy_step(grid: &QuantileGrid, k: usize) -> Result<GreedyStep> {
    let t = grid.num_intervals();
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!(
            "window size {k} outside 1..={t}"
        )));
    }
    Ok(GreedySteps::new(grid)
        .nth(k - 1)
        .expect("greedy expansion yields T windows"))
}

pub fn greedy_window(grid: &QuantileGrid, k: usize) -> Result<IntervalWindow> {
    greedy_step(grid, k).map(|s| s.window)
}

/// Minimum-width window of exactly `k` consecutive intervals, smallest
/// lower index on ties. Reference for the greedy construction.
pub fn shortest_window_bruteforce(grid: &QuantileGrid, k: usize) -> Result<IntervalWindow> {
    let t = grid.num_intervals();
    if k == 0 || k > t {
        return Err(Error::InvalidArgument(format!(
            "window size {k} outside 1..={t}"
        )));
    }
    let q = grid.values();
    let mut best = 0;
    let mut best_width = q[k] - q[0];
    for l in 1..=(t - k) {
        let w = q[l + k] - q[l];
        if w < best_width {
            best = l;
            best_width = w;
        }
    }
    Ok(IntervalWindow::from_grid(grid, best, k))
}

/// CIR conformity score: the number of greedy intervals needed to cover `y`,
/// or `T + 1` when `y` is outside `(q̂_0, q̂_T]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CirScore(pub usize);

impl CirScore {
    pub fn value(self) -> usize {
        self.0
    }
}

pub fn cir_score(grid: &QuantileGrid, y: f64) -> CirScore {
    if !grid.in_support(y) {
        return CirScore(grid.num_intervals() + 1);
    }
    for step in GreedySteps::new(grid) {
        if step.window.contains(y) {
            return CirScore(step.window.count);
        }
    }
    unreachable!("C_T spans the support")
}

/// [`cir_score`] with the greedy loop fast-forwarded to
/// `k₀ = ⌈rate · (1 − α) · T⌉`. The result is identical; when `y` is already
/// inside `C_{k₀}` the minimum is found by walking back down the chain.
pub fn cir_score_with_rate(grid: &QuantileGrid, y: f64, rate: f64, alpha: f64) -> Result<CirScore> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("rate {rate} outside [0, 1]")));
    }
    check_alpha(alpha)?;
    let t = grid.num_intervals();
    if !grid.in_support(y) {
        return Ok(CirScore(t + 1));
    }
    let start = ((rate * (1.0 - alpha) * t as f64).ceil() as usize).clamp(1, t);
    let mut steps = GreedySteps::new(grid);
    let prefix: Vec<IntervalWindow> = steps.by_ref().take(start).map(|s| s.window).collect();
    if prefix[start - 1].contains(y) {
        let mut k = start;
        while k > 1 && prefix[k - 2].contains(y) {
            k -= 1;
        }
        return Ok(CirScore(k));
    }
    for step in steps {
        if step.window.contains(y) {
            return Ok(CirScore(step.window.count));
        }
    }
    unreachable!("C_T spans the support")
}

/// Scale constant `c` for the rescaled widths `e_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthScale(f64);

impl WidthScale {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "width scale must be positive and finite, got {c}"
            )));
        }
        Ok(Self(c))
    }

    /// `c = (1 + 10⁻⁶) · max` interquantile width over the given (training)
    /// grids. Falls back to 1 when every grid is flat.
    pub fn from_training_grids<'a>(grids: impl IntoIterator<Item = &'a QuantileGrid>) -> Self {
        let max = grids
            .into_iter()
            .flat_map(|g| g.values().windows(2).map(|w| w[1] - w[0]))
            .fold(0.0_f64, f64::max);
        if max > 0.0 {
            Self(max * (1.0 + 1e-6))
        } else {
            Self(1.0)
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `width / c` clamped into `[E_CLAMP, 1 − E_CLAMP]`.
    #[inline]
    pub fn rescale(self, width: f64) -> f64 {
        (width / self.0).clamp(E_CLAMP, 1.0 - E_CLAMP)
    }
}

/// Rescaled width of the interval absorbed when growing `C_{k−1}` (lower
/// index `l_prev`) to `C_k`: the narrower existing neighbour divided by `c`.
pub fn e_k(grid: &QuantileGrid, k: usize, l_prev: usize, c: f64) -> Result<f64> {
    let scale = WidthScale::new(c)?;
    let t = grid.num_intervals();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "e_k needs k >= 2; use e_first for the seed interval".into(),
        ));
    }
    let prev_count = k - 1;
    if k > t || l_prev + prev_count > t {
        return Err(Error::InvalidArgument(format!(
            "window (l = {l_prev}, k = {prev_count}) does not fit a grid with T = {t}"
        )));
    }
    let left = (l_prev > 0).then(|| grid.width(l_prev - 1));
    let right = (l_prev + prev_count < t).then(|| grid.width(l_prev + prev_count));
    let width = match (left, right) {
        (Some(l), Some(r)) => l.min(r),
        (Some(w), None) | (None, Some(w)) => w,
        (None, None) => unreachable!("k <= T leaves a neighbour"),
    };
    Ok(scale.rescale(width))
}

/// `e_1`: width of the narrowest interval divided by `c`, clamped.
pub fn e_first(grid: &QuantileGrid, c: f64) -> Result<f64> {
    let scale = WidthScale::new(c)?;
    let min = grid
        .values()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    Ok(scale.rescale(min))
}

/// CIR+ score `k − 1 + e_k`; `T + 1` for out-of-support responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirPlusScore {
    pub value: f64,
    pub k: usize,
}

impl CirPlusScore {
    /// Fractional part `e_k`. The out-of-support sentinel reports 1.
    pub fn e(&self) -> f64 {
        self.value - (self.k as f64 - 1.0)
    }
}

pub fn cirplus_score(grid: &QuantileGrid, y: f64, scale: WidthScale) -> CirPlusScore {
    let t = grid.num_intervals();
    if !grid.in_support(y) {
        return CirPlusScore {
            value: (t + 1) as f64,
            k: t + 1,
        };
    }
    for step in GreedySteps::new(grid) {
        if step.window.contains(y) {
            let k = step.window.count;
            return CirPlusScore {
                value: (k - 1) as f64 + scale.rescale(step.added_width),
                k,
            };
        }
    }
    unreachable!("C_T spans the support")
}

/// Rank of every interval in the ascending-width order (1-based, ties to
/// the smaller index).
pub fn width_ranks(grid: &QuantileGrid) -> Vec<usize> {
    let t = grid.num_intervals();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| grid.width(a).total_cmp(&grid.width(b)).then(a.cmp(&b)));
    let mut ranks = vec![0; t];
    for (rank, &i) in order.iter().enumerate() {
        ranks[i] = rank + 1;
    }
    ranks
}

/// Non-unimodal score: width rank of the interval containing `y`, `T + 1`
/// out of support.
pub fn multimodal_rank_score(grid: &QuantileGrid, y: f64) -> usize {
    let t = grid.num_intervals();
    let Some(i) = grid.interval_containing(y) else {
        return t + 1;
    };
    let wi = grid.width(i);
    1 + (0..t)
        .filter(|&j| {
            let wj = grid.width(j);
            wj < wi || (wj == wi && j < i)
        })
        .count()
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")))
    }
}
