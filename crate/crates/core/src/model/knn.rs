//! Empirical conditional quantiles of the `k` nearest training responses.

use ndarray::{Array2, ArrayView1};

use super::mlp::interpolated_quantile;
use super::{check_dim, QuantileRegressor};
use crate::data::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::grid::{rearrange_monotone, QuantileGrid, QuantileLevels};

/// Euclidean distance on standardized features; distance ties go to the
/// lower training index.
#[derive(Debug, Clone)]
pub struct KnnQuantile {
    stats: Standardization,
    features: Array2<f64>,
    targets: Vec<f64>,
    k: usize,
    levels: Vec<f64>,
}

impl KnnQuantile {
    pub fn fit(train: &Dataset, levels: &QuantileLevels, k: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let stats = Standardization::fit(train.features())?;
        if k > train.len() {
            log::warn!("k = {k} exceeds the {} training rows; using all of them", train.len());
        }
        Ok(Self {
            features: stats.apply(train.features()),
            stats,
            targets: train.targets().to_vec(),
            k: k.min(train.len()),
            levels: levels.fit_levels(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

impl QuantileRegressor for KnnQuantile {
    fn n_features(&self) -> usize {
        self.stats.dim()
    }

    fn predict_row(&self, x: ArrayView1<'_, f64>) -> Result<QuantileGrid> {
        check_dim(self.n_features(), x.len())?;
        let mut z = vec![0.0; x.len()];
        for (j, (zj, &v)) in z.iter_mut().zip(x.iter()).enumerate() {
            *zj = self.stats.apply_value(j, v);
        }
        let mut dist: Vec<(f64, usize)> = self
            .features
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| (row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        let mut ys: Vec<f64> = dist.iter().map(|&(_, i)| self.targets[i]).collect();
        ys.sort_by(f64::total_cmp);
        rearrange_monotone(self.levels.iter().map(|&p| interpolated_quantile(&ys, p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy() -> Dataset {
        Dataset::new(
            vec!["a".into()],
            "y",
            array![[0.0], [1.0], [2.0], [3.0], [4.0]],
            vec![10.0, 30.0, 20.0, 50.0, 40.0],
        )
        .unwrap()
    }

    #[test]
    fn single_neighbor_is_degenerate() {
        let levels = QuantileLevels::new(4).unwrap();
        let m = KnnQuantile::fit(&toy(), &levels, 1).unwrap();
        let g = m.predict_quantiles(&[2.0]).unwrap();
        assert!(g.values().iter().all(|&q| q == 20.0));
    }

    #[test]
    fn all_neighbors_give_marginal_quantiles() {
        let levels = QuantileLevels::new(4).unwrap();
        let m = KnnQuantile::fit(&toy(), &levels, 5).unwrap();
        let mut sorted = toy().targets().to_vec();
        sorted.sort_by(f64::total_cmp);
        let expected: Vec<f64> = levels.fit_levels().iter().map(|&p| interpolated_quantile(&sorted, p)).collect();
        for x in [-3.0, 0.5, 7.0] {
            assert_eq!(m.predict_quantiles(&[x]).unwrap().values(), expected.as_slice());
        }
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let d = Dataset::new(vec!["a".into()], "y", array![[-1.0], [1.0]], vec![5.0, 7.0]).unwrap();
        let m = KnnQuantile::fit(&d, &QuantileLevels::new(2).unwrap(), 1).unwrap();
        assert_eq!(m.predict_quantiles(&[0.0]).unwrap().values()[1], 5.0);
    }

    #[test]
    fn rejects_wrong_dimension() {
        let m = KnnQuantile::fit(&toy(), &QuantileLevels::new(2).unwrap(), 2).unwrap();
        assert!(matches!(
            m.predict_quantiles(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 1, actual: 2 })
        ));
    }
}
