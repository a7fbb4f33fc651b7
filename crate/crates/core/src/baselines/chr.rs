//! Histogram baseline: equal-width bins over the quantile range, bin masses
//! from the piecewise-linear CDF through `(q̂_t, t/T)`, and greedy nested
//! windows of contiguous bins grown from the densest one.

use serde::{Deserialize, Serialize};

use crate::conformal::{calibration_rank, order_statistic, PredictionInterval};
use crate::error::{Error, Result};
use crate::grid::QuantileGrid;

/// Bin masses closer than this count as tied, so rounding in the CDF
/// differences does not decide the window order.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ChrHistogram {
    edges: Vec<f64>,
    probabilities: Vec<f64>,
}

impl ChrHistogram {
    pub fn bins(&self) -> usize {
        self.probabilities.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Bin `j` holds `(edge_j, edge_{j+1}]`.
    pub fn bin_of(&self, y: f64) -> Option<usize> {
        let b = self.bins();
        let (lo, hi) = (self.edges[0], self.edges[b]);
        if !(y > lo && y <= hi) {
            return None;
        }
        let width = (hi - lo) / b as f64;
        let mut j = (((y - lo) / width).ceil() as usize).clamp(1, b) - 1;
        while j > 0 && y <= self.edges[j] {
            j -= 1;
        }
        while j + 1 < b && y > self.edges[j + 1] {
            j += 1;
        }
        Some(j)
    }

    fn seed(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] + TIE_TOL {
                best = j;
            }
        }
        best
    }

    /// Nested windows `(first bin, last bin)` for `k = 1..=B`.
    pub fn windows(&self) -> ChrSteps<'_> {
        let s = self.seed();
        ChrSteps {
            hist: self,
            first: s,
            last: s,
            started: false,
        }
    }

    /// Bin window at step `k` as a half-open interval.
    pub fn window_interval(&self, k: usize) -> Result<PredictionInterval> {
        if k == 0 || k > self.bins() {
            return Err(Error::InvalidArgument(format!(
                "window size {k} outside 1..={}",
                self.bins()
            )));
        }
        let (a, b) = self.windows().nth(k - 1).expect("k ≤ B");
        Ok(PredictionInterval::new(self.edges[a], self.edges[b + 1]))
    }
}

pub struct ChrSteps<'a> {
    hist: &'a ChrHistogram,
    first: usize,
    last: usize,
    started: bool,
}

impl Iterator for ChrSteps<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if !self.started {
            self.started = true;
            return Some((self.first, self.last));
        }
        let p = &self.hist.probabilities;
        let left = (self.first > 0).then(|| p[self.first - 1]);
        let right = (self.last + 1 < p.len()).then(|| p[self.last + 1]);
        match (left, right) {
            (None, None) => return None,
            (Some(l), Some(r)) if l + TIE_TOL >= r => self.first -= 1,
            (Some(_), None) => self.first -= 1,
            _ => self.last += 1,
        }
        Some((self.first, self.last))
    }
}

/// Equal-width histogram of the conditional law implied by `grid`.
pub fn chr_build(grid: &QuantileGrid, bins: usize) -> Result<ChrHistogram> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("CHR needs at least 2 bins, got {bins}")));
    }
    let q = grid.values();
    let t = grid.num_intervals();
    let (lo, hi) = (grid.lower(), grid.upper());
    if hi <= lo {
        return Err(Error::DegenerateGrid(lo));
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|j| lo + j as f64 * width).collect();
    edges.push(hi);
    let mut cdf = Vec::with_capacity(bins + 1);
    cdf.push(0.0);
    let mut i = 0;
    for &e in &edges[1..bins] {
        while i < t && q[i + 1] <= e {
            i += 1;
        }
        let f = if i == t {
            1.0
        } else {
            (i as f64 + (e - q[i]) / (q[i + 1] - q[i])) / t as f64
        };
        cdf.push(f);
    }
    cdf.push(1.0);
    let probabilities = cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    Ok(ChrHistogram { edges, probabilities })
}

/// Step at which the greedy bin window first holds `y`; `B + 1` outside the range.
pub fn chr_score(hist: &ChrHistogram, y: f64) -> usize {
    let Some(j) = hist.bin_of(y) else {
        return hist.bins() + 1;
    };
    hist.windows()
        .position(|(a, b)| a <= j && j <= b)
        .map(|k| k + 1)
        .expect("the last window spans every bin")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrCalibration {
    /// Window size in `1..=B + 1`.
    pub threshold: usize,
    pub bins: usize,
    pub alpha: f64,
    pub n_cal: usize,
}

pub fn chr_calibrate(grids: &[QuantileGrid], targets: &[f64], alpha: f64, bins: usize) -> Result<ChrCalibration> {
    if grids.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: grids.len(),
            right: targets.len(),
        });
    }
    let rank = calibration_rank(alpha, grids.len())?;
    let scores = grids
        .iter()
        .zip(targets)
        .map(|(g, &y)| chr_build(g, bins).map(|h| chr_score(&h, y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChrCalibration {
        threshold: order_statistic(&scores, rank, usize::cmp),
        bins,
        alpha,
        n_cal: grids.len(),
    })
}

pub fn chr_predict(grid: &QuantileGrid, calibration: &ChrCalibration) -> Result<PredictionInterval> {
    if calibration.threshold > calibration.bins {
        return Ok(PredictionInterval::unbounded());
    }
    chr_build(grid, calibration.bins)?.window_interval(calibration.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interquantile::{cir_score, greedy_window};
    use proptest::prelude::*;

    fn uniform(t: usize) -> QuantileGrid {
        QuantileGrid::new((0..=t).map(|i| i as f64 * 0.5).collect()).unwrap()
    }

    #[test]
    fn uniform_grid_gives_flat_histogram() {
        for b in [2, 7, 100] {
            let h = chr_build(&uniform(10), b).unwrap();
            for &p in h.probabilities() {
                assert!((p - 1.0 / b as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guards() {
        assert!(chr_build(&uniform(4), 1).is_err());
        let flat = QuantileGrid::new(vec![1.0; 5]).unwrap();
        assert!(matches!(chr_build(&flat, 10), Err(Error::DegenerateGrid(_))));
    }

    #[test]
    fn densest_bin_scores_one() {
        let g = QuantileGrid::new(vec![0.0, 4.0, 4.5, 5.0, 9.0]).unwrap();
        let h = chr_build(&g, 9).unwrap();
        assert_eq!(chr_score(&h, 4.4), 1);
        assert_eq!(chr_score(&h, -1.0), 10);
        assert_eq!(chr_score(&h, 9.5), 10);
    }

    #[test]
    fn matches_cir_when_bins_are_quantile_intervals() {
        let t = 12;
        let g = uniform(t);
        let h = chr_build(&g, t).unwrap();
        for i in 0..=4 * t + 4 {
            let y = -0.3 + i as f64 * 0.137;
            assert_eq!(chr_score(&h, y), cir_score(&g, y).value(), "y = {y}");
        }
        for k in 1..=t {
            let w = greedy_window(&g, k).unwrap();
            let iv = h.window_interval(k).unwrap();
            assert!((iv.lo - w.lo).abs() < 1e-12 && (iv.hi - w.hi).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_sentinels() {
        let g = uniform(10);
        let full = ChrCalibration { threshold: 20, bins: 20, alpha: 0.1, n_cal: 1 };
        assert_eq!(chr_predict(&g, &full).unwrap(), PredictionInterval::new(0.0, 5.0));
        let beyond = ChrCalibration { threshold: 21, ..full };
        assert!(!chr_predict(&g, &beyond).unwrap().is_bounded());
    }

    fn arb_grid() -> impl Strategy<Value = QuantileGrid> {
        prop::collection::vec(0.01f64..3.0, 2..15).prop_map(|w| {
            let mut v = vec![0.0];
            for x in w {
                v.push(v[v.len() - 1] + x);
            }
            QuantileGrid::new(v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(g in arb_grid(), b in 2usize..300) {
            let h = chr_build(&g, b).unwrap();
            prop_assert!((h.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn windows_are_nested(g in arb_grid(), b in 2usize..60) {
            let h = chr_build(&g, b).unwrap();
            let w: Vec<(usize, usize)> = h.windows().collect();
            prop_assert_eq!(w.len(), b);
            for pair in w.windows(2) {
                prop_assert!(pair[1].0 <= pair[0].0 && pair[1].1 >= pair[0].1);
                prop_assert_eq!(pair[1].1 - pair[1].0, pair[0].1 - pair[0].0 + 1);
            }
            prop_assert_eq!(w[b - 1], (0, b - 1));
        }

        #[test]
        fn duality(rows in prop::collection::vec((prop::collection::vec(0.01f64..3.0, 8), 0.0f64..1.0), 20..60), alpha in 0.05f64..0.5) {
            let grids: Vec<QuantileGrid> = rows
                .iter()
                .map(|(w, _)| {
                    let mut v = vec![0.0];
                    for x in w {
                        v.push(v[v.len() - 1] + x);
                    }
                    QuantileGrid::new(v).unwrap()
                })
                .collect();
            let ys: Vec<f64> = grids
                .iter()
                .zip(&rows)
                .map(|(g, (_, u))| g.lower() - 0.5 + u * (g.upper() - g.lower() + 1.0))
                .collect();
            let cal = chr_calibrate(&grids, &ys, alpha, 25).unwrap();
            let mut covered = 0;
            for (g, &y) in grids.iter().zip(&ys) {
                let score = chr_score(&chr_build(g, 25).unwrap(), y);
                let inside = chr_predict(g, &cal).unwrap().contains(y);
                prop_assert_eq!(inside, score <= cal.threshold);
                covered += usize::from(inside);
            }
            prop_assert!(covered >= calibration_rank(alpha, grids.len()).unwrap());
        }
    }
}
