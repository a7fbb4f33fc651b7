//! Dense ReLU network trained on the mean pinball loss over all levels.
//!
//! Plain `ndarray` implementation: forward, backward, Adam and early stopping
//! on a held-out validation slice of the training set.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_dim, pinball, Hyperparameters, QuantileRegressor};
use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::grid::{rearrange_monotone, QuantileGrid, QuantileLevels};
use crate::rng::{seeded_stream, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub validation_fraction: f64,
}

impl MlpConfig {
    pub fn from_hyper(h: &Hyperparameters) -> Self {
        Self {
            hidden: h.hidden.clone(),
            learning_rate: h.learning_rate,
            max_epochs: h.max_epochs,
            patience: h.patience,
            batch_size: h.batch_size,
            dropout: h.dropout,
            validation_fraction: h.validation_fraction,
        }
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self::from_hyper(&Hyperparameters::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `inputs × outputs`.
    w: Array2<f64>,
    b: Array1<f64>,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    w: Vec<Array2<f64>>,
    b: Vec<Array1<f64>>,
}

impl Gradients {
    /// Flattened in [`Mlp::param`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Layer sizes from input to output. Weights and biases start
    /// `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
                let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
                Dense { w, b }
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.w.len() {
                let cols = layer.w.ncols();
                return (l, Some((index / cols, index % cols)), 0);
            }
            index -= layer.w.len();
            if index < layer.b.len() {
                return (l, None, index);
            }
            index -= layer.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index: each layer's weights (row-major), then its biases.
    pub fn param(&self, index: usize) -> f64 {
        match self.locate(index) {
            (l, Some(ij), _) => self.layers[l].w[ij],
            (l, None, j) => self.layers[l].b[j],
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        match self.locate(index) {
            (l, Some(ij), _) => self.layers[l].w[ij] = value,
            (l, None, j) => self.layers[l].b[j] = value,
        }
    }

    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let last = self.layers.len() - 1;
        self.layers[last].b.assign(&ArrayView1::from(bias));
    }

    /// Inference pass, no dropout.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h
    }

    /// Mean pinball loss over rows and levels, no dropout.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, levels: &[f64]) -> f64 {
        mean_pinball(&self.forward(x), y, levels)
    }

    /// Loss and gradient for one batch. `dropout` is the drop probability of
    /// hidden units (inverted scaling).
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        levels: &[f64],
        dropout: f64,
        rng: &mut R,
    ) -> (f64, Gradients) {
        let last = self.layers.len() - 1;
        let keep_scale = 1.0 / (1.0 - dropout);
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut masks: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.w);
            z += &layer.b;
            if l < last {
                let mut mask = Array2::zeros(z.raw_dim());
                Zip::from(&mut z).and(&mut mask).for_each(|zv, mv| {
                    let keep = dropout == 0.0 || rng.random::<f64>() >= dropout;
                    if *zv > 0.0 && keep {
                        *mv = keep_scale;
                        *zv *= keep_scale;
                    } else {
                        *zv = 0.0;
                    }
                });
                masks.push(mask);
            }
            acts.push(std::mem::replace(&mut h, z));
        }
        let out = h;
        let norm = 1.0 / (out.len() as f64);
        let mut loss = 0.0;
        let mut grad = Array2::zeros(out.raw_dim());
        for ((i, j), &o) in out.indexed_iter() {
            let (t, yi) = (levels[j], y[i]);
            loss += pinball(o, yi, t);
            grad[[i, j]] = norm * if yi >= o { -t } else { 1.0 - t };
        }
        let mut gw = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut gb = vec![Array1::zeros(0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            gw[l] = acts[l].t().dot(&grad);
            gb[l] = grad.sum_axis(Axis(0));
            if l > 0 {
                grad = grad.dot(&self.layers[l].w.t());
                grad *= &masks[l - 1];
            }
        }
        (loss * norm, Gradients { w: gw, b: gb })
    }
}

fn mean_pinball(out: &Array2<f64>, y: ArrayView1<'_, f64>, levels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (row, &yi) in out.rows().into_iter().zip(y.iter()) {
        total += row.iter().zip(levels).map(|(&o, &t)| pinball(o, yi, t)).sum::<f64>();
    }
    total / out.len().max(1) as f64
}

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
struct Adam {
    lr: f64,
    t: i32,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Mlp, lr: f64) -> Self {
        let zeros = Gradients {
            w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        };
        Self {
            lr,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, net: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        let update = |p: f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            p - step * *m / (v.sqrt() + Self::EPS * c2.sqrt())
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.w)
                .and(&mut self.m.w[l])
                .and(&mut self.v.w[l])
                .and(&g.w[l])
                .for_each(|p, m, v, &g| *p = update(*p, m, v, g));
            Zip::from(&mut layer.b)
                .and(&mut self.m.b[l])
                .and(&mut self.v.b[l])
                .and(&g.b[l])
                .for_each(|p, m, v, &g| *p = update(*p, m, v, g));
        }
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub(crate) fn interpolated_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A trained network with its input and output standardization.
#[derive(Debug, Clone)]
pub struct PinballMlp {
    net: Mlp,
    x_stats: Standardization,
    y_mean: f64,
    y_scale: f64,
    epochs: usize,
    best_validation: f64,
}

impl PinballMlp {
    pub fn fit(config: &MlpConfig, train: &Dataset, levels: &QuantileLevels, seed: u64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let mut rng = seeded_stream(seed, stream::MODEL);
        let taus = levels.fit_levels();
        let x_stats = Standardization::fit(train.features())?;
        let x = x_stats.apply(train.features());
        let y_raw = train.targets();
        let n = y_raw.len();
        let y_mean = y_raw.iter().sum::<f64>() / n as f64;
        let y_sd = (y_raw.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let y_scale = if y_sd > 0.0 { y_sd } else { 1.0 };
        let y = Array1::from_iter(y_raw.iter().map(|v| (v - y_mean) / y_scale));

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = (config.validation_fraction * n as f64).round() as usize;
        let n_val = if n - n_val < 1 { 0 } else { n_val };
        let (val_idx, fit_idx) = order.split_at(n_val);
        let (x_fit, y_fit) = (x.select(Axis(0), fit_idx), y.select(Axis(0), fit_idx));
        let (x_val, y_val) = (x.select(Axis(0), val_idx), y.select(Axis(0), val_idx));

        let mut sizes = vec![x.ncols()];
        sizes.extend(&config.hidden);
        sizes.push(taus.len());
        let mut net = Mlp::new(&sizes, &mut rng);
        let mut sorted_y = y_fit.to_vec();
        sorted_y.sort_by(f64::total_cmp);
        let bias: Vec<f64> = taus.iter().map(|&t| interpolated_quantile(&sorted_y, t)).collect();
        net.set_output_bias(&bias);

        let mut adam = Adam::new(&net, config.learning_rate);
        let mut best = (f64::INFINITY, net.clone(), 0usize);
        let mut since_best = 0;
        let mut rows: Vec<usize> = (0..fit_idx.len()).collect();
        let batch = config.batch_size.max(1);
        let mut epochs = 0;
        for epoch in 0..config.max_epochs {
            epochs = epoch + 1;
            rows.shuffle(&mut rng);
            for chunk in rows.chunks(batch) {
                let xb = x_fit.select(Axis(0), chunk);
                let yb = y_fit.select(Axis(0), chunk);
                let (loss, grad) = net.loss_and_grad(xb.view(), yb.view(), &taus, config.dropout, &mut rng);
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                adam.step(&mut net, &grad);
            }
            if n_val == 0 {
                continue;
            }
            let val = net.loss(x_val.view(), y_val.view(), &taus);
            if !val.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            if val < best.0 {
                best = (val, net.clone(), epoch + 1);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
        let (best_validation, net) = if n_val == 0 {
            (f64::NAN, net)
        } else {
            log::debug!("early stopping kept epoch {} of {epochs}", best.2);
            (best.0, best.1)
        };
        Ok(Self {
            net,
            x_stats,
            y_mean,
            y_scale,
            epochs,
            best_validation,
        })
    }

    /// Epochs run before stopping.
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Best validation loss in standardized response units.
    pub fn best_validation(&self) -> f64 {
        self.best_validation
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    fn to_grid(&self, raw: ArrayView1<'_, f64>) -> Result<QuantileGrid> {
        rearrange_monotone(raw.iter().map(|o| self.y_mean + self.y_scale * o).collect())
    }
}

impl QuantileRegressor for PinballMlp {
    fn n_features(&self) -> usize {
        self.x_stats.dim()
    }

    fn predict_row(&self, x: ArrayView1<'_, f64>) -> Result<QuantileGrid> {
        check_dim(self.n_features(), x.len())?;
        let mut row = Array2::zeros((1, x.len()));
        for (j, &v) in x.iter().enumerate() {
            row[[0, j]] = self.x_stats.apply_value(j, v);
        }
        let out = self.net.forward(row.view());
        self.to_grid(out.row(0))
    }

    fn predict_batch(&self, features: &Array2<f64>) -> Result<Vec<QuantileGrid>> {
        check_dim(self.n_features(), features.ncols())?;
        let x = self.x_stats.apply(features);
        let mut grids = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(1024) {
            let end = (start + 1024).min(x.nrows());
            let out = self.net.forward(x.slice(s![start..end, ..]));
            for row in out.rows() {
                grids.push(self.to_grid(row)?);
            }
        }
        Ok(grids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;

    fn finite_difference_check(sizes: &[usize], seed: u64) {
        let mut rng = seeded(seed);
        let mut net = Mlp::new(sizes, &mut rng);
        let n = 7;
        let x = Array2::from_shape_fn((n, sizes[0]), |_| rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
        let out = sizes[sizes.len() - 1];
        let levels: Vec<f64> = (0..out).map(|j| (j as f64 + 0.5) / out as f64).collect();
        let (_, grad) = net.loss_and_grad(x.view(), y.view(), &levels, 0.0, &mut rng);
        let analytic = grad.flat();
        assert_eq!(analytic.len(), net.n_params());
        let h = 1e-6;
        for (i, &g) in analytic.iter().enumerate() {
            let p = net.param(i);
            net.set_param(i, p + h);
            let up = net.loss(x.view(), y.view(), &levels);
            net.set_param(i, p - h);
            let down = net.loss(x.view(), y.view(), &levels);
            net.set_param(i, p);
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - g).abs() / numeric.abs().max(g.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: analytic {g}, numeric {numeric}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences_two_params() {
        finite_difference_check(&[1, 1], 1);
    }

    #[test]
    fn gradient_matches_finite_differences_hidden() {
        finite_difference_check(&[2, 5, 4, 3], 2);
    }

    #[test]
    fn params_round_trip() {
        let mut net = Mlp::new(&[2, 3, 1], &mut seeded(0));
        assert_eq!(net.n_params(), 2 * 3 + 3 + 3 + 1);
        net.set_param(9, 4.0);
        assert_eq!(net.param(9), 4.0);
        assert_eq!(net.layers[1].w[[0, 0]], 4.0);
    }

    #[test]
    fn forward_shape() {
        let net = Mlp::new(&[1, 4, 3], &mut seeded(0));
        assert_eq!(net.forward(array![[0.0], [1.0]].view()).dim(), (2, 3));
    }

    #[test]
    fn interpolated_quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(interpolated_quantile(&v, 0.0), 1.0);
        assert_eq!(interpolated_quantile(&v, 1.0), 4.0);
        assert!((interpolated_quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
