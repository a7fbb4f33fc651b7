//! Tabular datasets: CSV ingestion and export, standardization, seeded splits.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded_stream;

/// Features (`n × d`) and targets (`n`), with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    target_name: String,
    features: Array2<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        features: Array2<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::LengthMismatch {
                left: features.nrows(),
                right: targets.len(),
            });
        }
        if feature_names.len() != features.ncols() {
            return Err(Error::LengthMismatch {
                left: feature_names.len(),
                right: features.ncols(),
            });
        }
        if let Some((index, &value)) = features
            .iter()
            .chain(targets.iter())
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self {
            feature_names,
            target_name: target_name.into(),
            features: features.as_standard_layout().into_owned(),
            targets,
        })
    }

    /// Single-feature dataset with columns `x` and `y`.
    pub fn univariate(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let features = Array2::from_shape_vec((n, 1), x)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Self::new(vec!["x".into()], "y", features, y)
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            features: self.features.select(Axis(0), indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    fn with_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            features,
            targets: self.targets.clone(),
        }
    }

    /// Writes features then target, header first. Values use the shortest
    /// representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        out.write_record(&header)?;
        for (row, y) in self.features.rows().into_iter().zip(&self.targets) {
            let record: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| v.to_string()).collect();
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// Reads a numeric CSV with a header row. Every column except `target_column`
/// becomes a feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    parse_csv(text.as_bytes(), target_column)
}

pub fn parse_csv<R: Read>(reader: R, target_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_owned()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();
    let mut flat = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: row + 1,
                column: header.get(col).cloned().unwrap_or_default(),
                value: cell.to_owned(),
            })?;
            if col == target_idx {
                targets.push(value);
            } else {
                flat.push(value);
            }
        }
    }
    let n = targets.len();
    let features =
        Array2::from_shape_vec((n, d), flat).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Dataset::new(feature_names, target_column, features, targets)
}

/// Per-feature mean and population standard deviation from a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Zero marks a constant feature, which standardizes to 0.
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        let mut mean = Vec::with_capacity(features.ncols());
        let mut std = Vec::with_capacity(features.ncols());
        for (j, col) in features.columns().into_iter().enumerate() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                log::warn!("feature {j} is constant in the training split; mapping it to 0");
                std.push(0.0);
            } else {
                std.push(s);
            }
            mean.push(m);
        }
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply_value(&self, j: usize, v: f64) -> f64 {
        if self.std[j] == 0.0 {
            0.0
        } else {
            (v - self.mean[j]) / self.std[j]
        }
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
            *o = self.apply_value(j, v);
        }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.apply_value(j, *v);
            }
        }
        out
    }
}

/// Fits standardization on `train` and applies it to `train` and every other split.
pub fn standardize_fit_apply(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Standardization)> {
    let stats = Standardization::fit(train.features())?;
    let train_std = train.with_features(stats.apply(train.features()));
    let others = others
        .iter()
        .map(|d| d.with_features(stats.apply(d.features())))
        .collect();
    Ok((train_std, others, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub cal: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.cal + self.test
    }
}

/// Disjoint train/cal/test index sets drawn by a seeded shuffle.
pub fn split_indices(n: usize, sizes: SplitSizes, seed: u64) -> Result<[Vec<usize>; 3]> {
    if sizes.total() > n {
        return Err(Error::InfeasibleSplit {
            requested: sizes.total(),
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_stream(seed, crate::rng::stream::SPLIT));
    let test = idx[sizes.train + sizes.cal..sizes.total()].to_vec();
    let cal = idx[sizes.train..sizes.train + sizes.cal].to_vec();
    idx.truncate(sizes.train);
    Ok([idx, cal, test])
}

pub fn split(dataset: &Dataset, sizes: SplitSizes, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, cal, test] = split_indices(dataset.len(), sizes, seed)?;
    Ok((dataset.select(&train), dataset.select(&cal), dataset.select(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::collections::HashSet;

    #[test]
    fn loads_three_rows() {
        let text = "f0,f1,y\n1,2,3\n4,5,6\n7,8,9\n";
        let d = parse_csv(text.as_bytes(), "y").unwrap();
        assert_eq!(d.features().dim(), (3, 2));
        assert_eq!(d.targets(), &[3.0, 6.0, 9.0]);
        assert_eq!(d.feature_names(), &["f0", "f1"]);
    }

    #[test]
    fn target_may_be_any_column() {
        let d = parse_csv("y,a\n1,2\n".as_bytes(), "y").unwrap();
        assert_eq!(d.features(), &array![[2.0]]);
        assert_eq!(d.targets(), &[1.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv("f0,f1\n1,2\n".as_bytes(), "y"),
            Err(Error::MissingColumn(c)) if c == "y"
        ));
        match parse_csv("f0,y\n1,2\n3,abc\n".as_bytes(), "y") {
            Err(Error::NonNumericCell { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "y", "abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_csv(dir.path().join("nope.csv"), "y"),
            Err(Error::MissingFile(_))
        ));
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(load_csv(&empty, "y"), Err(Error::EmptyFile(_))));
    }

    #[test]
    fn export_then_load_is_identity() {
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            "y",
            array![[0.1, -3.0e-17], [1.0 / 3.0, 2.5e10]],
            vec![std::f64::consts::PI, -0.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.save_csv(&path).unwrap();
        assert_eq!(load_csv(&path, "y").unwrap(), d);
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let train = Dataset::new(
            vec!["a".into(), "c".into()],
            "y",
            array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]],
            vec![0.0; 3],
        )
        .unwrap();
        let test = Dataset::new(vec!["a".into(), "c".into()], "y", array![[4.0, 7.0]], vec![0.0]).unwrap();
        let (tr, others, stats) = standardize_fit_apply(&train, &[&test]).unwrap();
        let expected = [-1.224_744_871, 0.0, 1.224_744_871];
        for (v, e) in tr.features().column(0).iter().zip(expected) {
            assert!((v - e).abs() < 1e-6);
        }
        assert!(tr.features().column(1).iter().all(|&v| v == 0.0));
        assert_eq!(stats.std[1], 0.0);
        assert!((others[0].features()[[0, 0]] - 2.0 * 1.224_744_871).abs() < 1e-6);
        assert_eq!(others[0].features()[[0, 1]], 0.0);
    }

    #[test]
    fn splits_are_disjoint_and_seeded() {
        let sizes = SplitSizes { train: 5, cal: 3, test: 2 };
        let [a, b, c] = split_indices(10, sizes, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5, 3, 2));
        let all: HashSet<usize> = a.iter().chain(&b).chain(&c).copied().collect();
        assert_eq!(all.len(), 10);
        assert_eq!(split_indices(10, sizes, 1).unwrap(), [a.clone(), b, c]);
        let distinct: HashSet<Vec<usize>> =
            (0..100).map(|s| split_indices(10, sizes, s).unwrap()[0].clone()).collect();
        assert!(distinct.len() > 90);
        assert!(matches!(
            split_indices(9, sizes, 0),
            Err(Error::InfeasibleSplit { requested: 10, available: 9 })
        ));
    }
}
