//! The skewed, heteroscedastic synthetic family.
//!
//! `Y₀ = Poisson(sin²(2πx) + 0.1) + 0.2·x·ε₁ + 1{ε₂ < 0.09}(5 + 2ε₃)` with
//! `ε₁, ε₃ ~ N(0, 1)`, `ε₂ ~ U(0, 1)` and `X ~ U(0, 1)`. The response is
//! `−Y₀` with probability `symmetry`, else `Y₀`.
//!
//! Besides sampling, [`ConditionalLaw`] gives the exact law of `Y | X = x`
//! (a Poisson-weighted Gaussian mixture) with CDF, density, quantiles and
//! cumulants, used as a noise-free oracle.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{seeded_stream, stream};

pub const JUMP_PROB: f64 = 0.09;
pub const JUMP_MEAN: f64 = 5.0;
pub const JUMP_SD: f64 = 2.0;
pub const NOISE_SLOPE: f64 = 0.2;

/// Poisson rate at `x`.
pub fn poisson_rate(x: f64) -> f64 {
    (2.0 * PI * x).sin().powi(2) + 0.1
}

/// Inversion by sequential search: one uniform per draw.
pub fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u32 {
    let u: f64 = rng.random();
    let mut k = 0u32;
    let mut p = (-rate).exp();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= rate / f64::from(k);
        cdf += p;
        if p == 0.0 {
            break;
        }
    }
    k
}

/// One draw of `Y₀ | X = x`. Always consumes the same number of variates.
pub fn sample_y0<R: Rng + ?Sized>(x: f64, rng: &mut R) -> f64 {
    let k = sample_poisson(poisson_rate(x), rng);
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.random();
    let e3: f64 = rng.sample(StandardNormal);
    let jump = if e2 < JUMP_PROB { JUMP_MEAN + JUMP_SD * e3 } else { 0.0 };
    f64::from(k) + NOISE_SLOPE * x * e1 + jump
}

/// One draw of `Y | X = x`.
pub fn sample_y<R: Rng + ?Sized>(x: f64, symmetry: f64, rng: &mut R) -> f64 {
    let y0 = sample_y0(x, rng);
    let flip: f64 = rng.random();
    if flip < symmetry {
        -y0
    } else {
        y0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub symmetry: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        check_symmetry(self.symmetry)
    }
}

fn check_symmetry(symmetry: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&symmetry) {
        return Err(Error::InvalidArgument(format!(
            "symmetry must lie in [0, 1], got {symmetry}"
        )));
    }
    Ok(())
}

/// `n` i.i.d. pairs in a dataset with columns `x` and `y`.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = seeded_stream(config.seed, stream::DATA);
    let mut xs = Vec::with_capacity(config.n);
    let mut ys = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let x: f64 = rng.random();
        xs.push(x);
        ys.push(sample_y(x, config.symmetry, &mut rng));
    }
    Dataset::univariate(xs, ys)
}

/// Monte-Carlo estimate of `E_X[skew(Y | X)]`: `mc_samples` draws at each
/// of 100 evenly spaced `x` values.
pub fn skewness(config: &SyntheticConfig, mc_samples: usize) -> Result<f64> {
    check_symmetry(config.symmetry)?;
    if mc_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "skewness needs at least 10000 samples per x, got {mc_samples}"
        )));
    }
    const NX: usize = 100;
    let mut rng = seeded_stream(config.seed, stream::METRICS);
    let mut draws = vec![0.0; mc_samples];
    let mut total = 0.0;
    for i in 0..NX {
        let x = (i as f64 + 0.5) / NX as f64;
        for d in draws.iter_mut() {
            *d = sample_y(x, config.symmetry, &mut rng);
        }
        total += sample_skewness(&draws);
    }
    Ok(total / NX as f64)
}

/// Moment estimator `m₃ / m₂^{3/2}`.
pub fn sample_skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(a, b), v| {
        let d = v - mean;
        (a + d * d, b + d * d * d)
    });
    let (m2, m3) = (m2 / n, m3 / n);
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// Exact `E_X[skew(Y | X)]` by midpoint quadrature over `x`.
pub fn exact_skewness(symmetry: f64, n_x: usize) -> Result<f64> {
    check_symmetry(symmetry)?;
    let n_x = n_x.max(1);
    let total: f64 = (0..n_x)
        .map(|i| ConditionalLaw::new((i as f64 + 0.5) / n_x as f64, symmetry).map(|l| l.skewness()))
        .sum::<Result<f64>>()?;
    Ok(total / n_x as f64)
}

/// Smallest `symmetry ∈ [0, 0.5]` whose averaged conditional skewness is at
/// most `target`, by bisection on the exact curve (decreasing on that range).
pub fn symmetry_for_skewness(target: f64) -> Result<f64> {
    let skew = |s: f64| exact_skewness(s, 200);
    let (mut lo, mut hi) = (0.0, 0.5);
    if target >= skew(lo)? {
        return Ok(lo);
    }
    if target <= skew(hi)? {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if skew(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

#[inline]
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Exact law of `Y | X = x`.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    x: f64,
    symmetry: f64,
    /// Poisson pmf truncated once the remaining tail is below `1e-16`.
    pmf: Vec<f64>,
    sigma_noise: f64,
    sigma_jump: f64,
}

/// Normal components beyond this many standard deviations count as 0 or 1.
const SATURATION_Z: f64 = 9.0;

impl ConditionalLaw {
    pub fn new(x: f64, symmetry: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::NonFinite { index: 0, value: x });
        }
        check_symmetry(symmetry)?;
        let rate = poisson_rate(x);
        let mut pmf = vec![(-rate).exp()];
        let mut cdf = pmf[0];
        while 1.0 - cdf > 1e-16 && pmf.len() < 200 {
            let k = pmf.len() as f64;
            let next = pmf[pmf.len() - 1] * rate / k;
            pmf.push(next);
            cdf += next;
        }
        let sigma_noise = (NOISE_SLOPE * x).abs();
        let sigma_jump = (sigma_noise * sigma_noise + JUMP_SD * JUMP_SD).sqrt();
        Ok(Self {
            x,
            symmetry,
            pmf,
            sigma_noise,
            sigma_jump,
        })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    /// `P(Z ≤ y)`, or `P(Z < y)` when `strict`; they differ only for `sigma = 0`.
    #[inline]
    fn component_cdf(z: f64, sigma: f64, strict: bool) -> f64 {
        if sigma == 0.0 {
            let below = if strict { z > 0.0 } else { z >= 0.0 };
            return if below { 1.0 } else { 0.0 };
        }
        if z < -SATURATION_Z {
            0.0
        } else if z > SATURATION_Z {
            1.0
        } else {
            normal_cdf(z)
        }
    }

    #[inline]
    fn component_pdf(z: f64, sigma: f64) -> f64 {
        if sigma == 0.0 || z.abs() > SATURATION_Z {
            0.0
        } else {
            normal_pdf(z) / sigma
        }
    }

    /// CDF of `Y₀`, or its left limit when `strict`.
    fn cdf0(&self, y: f64, strict: bool) -> f64 {
        let mut total = 0.0;
        for (k, &p) in self.pmf.iter().enumerate() {
            let k = k as f64;
            let (dn, dj) = (y - k, y - k - JUMP_MEAN);
            let zj = dj / self.sigma_jump;
            let zn = if self.sigma_noise > 0.0 { dn / self.sigma_noise } else { dn };
            if zj < -SATURATION_Z && zn < -SATURATION_Z {
                // Every later term is further left.
                break;
            }
            total += p
                * ((1.0 - JUMP_PROB) * Self::component_cdf(zn, self.sigma_noise, strict)
                    + JUMP_PROB * Self::component_cdf(zj, self.sigma_jump, strict));
        }
        total.clamp(0.0, 1.0)
    }

    fn pdf0(&self, y: f64) -> f64 {
        let mut total = 0.0;
        for (k, &p) in self.pmf.iter().enumerate() {
            let k = k as f64;
            let zj = (y - k - JUMP_MEAN) / self.sigma_jump;
            let zn = if self.sigma_noise > 0.0 { (y - k) / self.sigma_noise } else { y - k };
            if zj < -SATURATION_Z && zn < -SATURATION_Z {
                break;
            }
            let noise = Self::component_pdf(zn, self.sigma_noise);
            total += p
                * ((1.0 - JUMP_PROB) * noise + JUMP_PROB * Self::component_pdf(zj, self.sigma_jump));
        }
        total
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let s = self.symmetry;
        let pos = if s < 1.0 { self.cdf0(y, false) } else { 0.0 };
        let neg = if s > 0.0 { 1.0 - self.cdf0(-y, true) } else { 0.0 };
        ((1.0 - s) * pos + s * neg).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        let s = self.symmetry;
        let pos = if s < 1.0 { self.pdf0(y) } else { 0.0 };
        let neg = if s > 0.0 { self.pdf0(-y) } else { 0.0 };
        (1.0 - s) * pos + s * neg
    }

    /// A bound `b` with `F(−b) ≈ 0` and `F(b) ≈ 1`.
    fn support_bound(&self) -> f64 {
        self.pmf.len() as f64 + JUMP_MEAN + 40.0 * self.sigma_jump + 1.0
    }

    /// `inf {y : F(y) ≥ p}` by safeguarded Newton iteration inside a bracket.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        let b = self.support_bound();
        self.quantile_in(p, -b, b, 0.0)
    }

    /// Search inside `[lo, hi]` starting from `start`.
    fn quantile_in(&self, p: f64, mut lo: f64, mut hi: f64, start: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level must lie in (0, 1), got {p}"
            )));
        }
        let mut y = start;
        for _ in 0..200 {
            let f = self.cdf(y) - p;
            if f < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            if f.abs() < 1e-15 {
                return Ok(y);
            }
            if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
                // Bracket collapsed, typically onto an atom; `hi` has F ≥ p.
                return Ok(hi);
            }
            let d = self.pdf(y);
            let newton = y - f / d;
            y = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Ok(y)
    }

    /// Quantiles at non-decreasing `levels`, each search bracketed below by
    /// the previous answer.
    pub fn quantiles(&self, levels: &[f64]) -> Result<Vec<f64>> {
        let b = self.support_bound();
        let mut lo = -b;
        let mut out = Vec::with_capacity(levels.len());
        for &p in levels {
            let start = out.last().copied().unwrap_or(0.0);
            let q = self.quantile_in(p, lo, b, start)?;
            out.push(q);
            lo = q - 1e-9 * q.abs().max(1.0);
        }
        for i in 1..out.len() {
            if out[i] < out[i - 1] {
                out[i] = out[i - 1];
            }
        }
        Ok(out)
    }

    /// First three cumulants of `Y₀` from independent components.
    fn cumulants0(&self) -> [f64; 3] {
        let rate = poisson_rate(self.x);
        let (p, m, v) = (JUMP_PROB, JUMP_MEAN, JUMP_SD * JUMP_SD);
        let ej = [m, m * m + v, m * m * m + 3.0 * m * v];
        let w1 = p * ej[0];
        let w2 = p * ej[1];
        let w3 = p * ej[2];
        let k2w = w2 - w1 * w1;
        let k3w = w3 - 3.0 * w2 * w1 + 2.0 * w1.powi(3);
        [
            rate + w1,
            rate + self.sigma_noise.powi(2) + k2w,
            rate + k3w,
        ]
    }

    /// Mean, variance and skewness of `Y | X = x`.
    pub fn moments(&self) -> (f64, f64, f64) {
        let [k1, k2, k3] = self.cumulants0();
        let r1 = k1;
        let r2 = k2 + k1 * k1;
        let r3 = k3 + 3.0 * k2 * k1 + k1.powi(3);
        let sign = 1.0 - 2.0 * self.symmetry;
        let (m1, m2, m3) = (sign * r1, r2, sign * r3);
        let var = m2 - m1 * m1;
        let c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        (m1, var, c3 / var.powf(1.5))
    }

    pub fn skewness(&self) -> f64 {
        self.moments().2
    }
}

/// Shortest window over `mc_samples` sorted draws of `Y | X = x` that holds
/// `⌈(1 − α)·m⌉` of them. Ties go to the lowest window.
pub fn oracle_shortest_interval<R: Rng + ?Sized>(
    x: f64,
    symmetry: f64,
    alpha: f64,
    mc_samples: usize,
    rng: &mut R,
) -> Result<PredictionInterval> {
    if mc_samples < 100_000 {
        return Err(Error::InvalidArgument(format!(
            "oracle interval needs at least 100000 samples, got {mc_samples}"
        )));
    }
    crate::interquantile::check_alpha(alpha)?;
    check_symmetry(symmetry)?;
    let mut draws: Vec<f64> = (0..mc_samples).map(|_| sample_y(x, symmetry, rng)).collect();
    draws.sort_by(f64::total_cmp);
    let (lo, hi) = shortest_covering_window(&draws, alpha);
    Ok(PredictionInterval::new(lo, hi))
}

/// Shortest `[s_i, s_{i+h−1}]` with `h = ⌈(1 − α)·m⌉` over sorted samples.
pub fn shortest_covering_window(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let m = sorted.len();
    let h = (((1.0 - alpha) * m as f64) - 1e-9).ceil().clamp(1.0, m as f64) as usize;
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=m - h {
        let w = sorted[i + h - 1] - sorted[i];
        if w < best_width {
            best_width = w;
            best = i;
        }
    }
    (sorted[best], sorted[best + h - 1])
}
