//! Replicated experiments: split, fit, calibrate every method on the same
//! grids, score the test set, and summarize as mean (sd).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{chr_calibrate, chr_predict, cqr_calibrate, cqr_predict};
use crate::conformal::{conformalize, PredictionInterval, PredictionSet, SplitOptions};
use crate::config::{ExperimentConfig, Method, Source};
use crate::data::{load_csv, split_indices, standardize_fit_apply, Dataset};
use crate::error::{Error, Result};
use crate::grid::{QuantileGrid, QuantileLevels};
use crate::interquantile::WidthScale;
use crate::metrics::{MetricRow, SlabOrders};
use crate::model::{fit, FittedModel, ModelKind};
use crate::rng::{replication_seed, seeded_stream, stream};
use crate::synthetic::{generate, oracle_shortest_interval, SyntheticConfig};

/// Calibration knobs shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodParams {
    pub alpha: f64,
    pub bins: usize,
    pub rate: f64,
    pub scale: Option<WidthScale>,
}

#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub sets: Vec<PredictionSet>,
    pub threshold: f64,
    pub seconds_per_sample: f64,
}

/// Calibrates `method` and predicts every test grid. Time covers scoring,
/// thresholding and prediction, per calibration-plus-test point.
pub fn run_method(
    method: Method,
    cal_grids: &[QuantileGrid],
    cal_targets: &[f64],
    test_grids: &[QuantileGrid],
    params: &MethodParams,
) -> Result<MethodOutput> {
    if let Some(cm) = method.conformal() {
        let options = SplitOptions {
            rate: params.rate,
            scale: params.scale,
        };
        let out = conformalize(cm, cal_grids, cal_targets, test_grids, params.alpha, options)?;
        return Ok(MethodOutput {
            sets: out.sets,
            threshold: out.calibration.threshold,
            seconds_per_sample: out.seconds_per_sample,
        });
    }
    let start = Instant::now();
    let (threshold, intervals): (f64, Vec<PredictionInterval>) = match method {
        Method::Cqr => {
            let cal = cqr_calibrate(cal_grids, cal_targets, params.alpha)?;
            (cal.q_offset, test_grids.iter().map(|g| cqr_predict(g, &cal)).collect())
        }
        Method::Chr => {
            let cal = chr_calibrate(cal_grids, cal_targets, params.alpha, params.bins)?;
            let sets = test_grids
                .iter()
                .map(|g| chr_predict(g, &cal))
                .collect::<Result<Vec<_>>>()?;
            (cal.threshold as f64, sets)
        }
        _ => unreachable!("conformal methods handled above"),
    };
    let elapsed = start.elapsed().as_secs_f64();
    Ok(MethodOutput {
        sets: intervals.into_iter().map(PredictionSet::single).collect(),
        threshold,
        seconds_per_sample: elapsed / (cal_grids.len() + test_grids.len()) as f64,
    })
}

/// One row of the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: Method,
    pub seed: u64,
    pub marginal: f64,
    pub conditional: f64,
    pub width: f64,
    pub unbounded_count: usize,
    pub time_per_sample_s: f64,
    pub threshold: f64,
}

pub const RESULTS_HEADER: [&str; 8] = [
    "method",
    "seed",
    "marginal",
    "conditional",
    "width",
    "unbounded_count",
    "time_per_sample_s",
    "threshold",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single replication.
    pub sd: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub reps: usize,
    pub marginal: Stat,
    pub conditional: Stat,
    pub width: Stat,
    pub unbounded: Stat,
    pub time_per_sample: Stat,
    pub threshold: Stat,
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Loads the configured dataset for CSV sources.
fn base_dataset(config: &ExperimentConfig) -> Result<Option<Dataset>> {
    match config.source {
        Source::Synthetic => Ok(None),
        Source::Csv => {
            let path = config
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::Config("csv source needs csv_path".into()))?;
            Ok(Some(load_csv(path, &config.target)?))
        }
    }
}

/// The oracle ignores training data, so one instance serves every replication.
fn shared_model(config: &ExperimentConfig, levels: &QuantileLevels) -> Result<Option<FittedModel>> {
    if config.model != ModelKind::SyntheticOracle {
        return Ok(None);
    }
    let empty = Dataset::univariate(vec![0.5], vec![0.0])?;
    Ok(Some(fit(&config.model_spec(config.seed), &empty, levels)?))
}

/// Runs replication `index` of `config`.
pub fn run_replication(
    config: &ExperimentConfig,
    index: usize,
    base: Option<&Dataset>,
    shared: Option<&FittedModel>,
) -> Result<Vec<ExperimentRecord>> {
    let seed = replication_seed(config.seed, index);
    let levels = QuantileLevels::new(config.num_intervals)?;
    let generated;
    let data = match base {
        Some(d) => d,
        None => {
            generated = generate(&SyntheticConfig {
                n: config.n,
                symmetry: config.symmetry,
                seed,
            })?;
            &generated
        }
    };
    let sizes = config.split_sizes(data.len())?;
    let [tr, ca, te] = split_indices(data.len(), sizes, seed)?;
    let distinct: HashSet<usize> = tr.iter().chain(&ca).chain(&te).copied().collect();
    if distinct.len() != sizes.total() {
        return Err(Error::InvalidArgument("train, calibration and test rows overlap".into()));
    }
    let (mut train, mut cal, mut test) = (data.select(&tr), data.select(&ca), data.select(&te));
    if config.model != ModelKind::SyntheticOracle {
        let (t, others, _) = standardize_fit_apply(&train, &[&cal, &test])?;
        let mut others = others.into_iter();
        train = t;
        cal = others.next().expect("two splits");
        test = others.next().expect("two splits");
    }

    let fitted;
    let model = match shared {
        Some(m) => m,
        None => {
            fitted = fit(&config.model_spec(seed), &train, &levels)?;
            &fitted
        }
    };
    let cal_grids = model.predict_many(cal.features())?;
    let test_grids = model.predict_many(test.features())?;
    let scale = if config.methods.contains(&Method::CirPlus) {
        Some(WidthScale::from_training_grids(&model.predict_many(train.features())?))
    } else {
        None
    };
    let params = MethodParams {
        alpha: config.alpha,
        bins: config.bins,
        rate: config.rate,
        scale,
    };
    let slabs = SlabOrders::new(test.features(), config.n_directions, seed)?;
    config
        .methods
        .iter()
        .map(|&method| {
            let out = run_method(method, &cal_grids, cal.targets(), &test_grids, &params)?;
            let time = if config.timing { out.seconds_per_sample } else { 0.0 };
            let row = MetricRow::evaluate(&out.sets, test.targets(), &slabs, config.delta, time)?;
            Ok(ExperimentRecord {
                method,
                seed,
                marginal: row.marginal,
                conditional: row.conditional,
                width: row.width,
                unbounded_count: row.unbounded_count,
                time_per_sample_s: row.time_per_sample,
                threshold: out.threshold,
            })
        })
        .collect()
}

/// Every replication of `config`, in parallel, plus the per-method summary.
pub fn run_benchmark(config: &ExperimentConfig) -> Result<BenchmarkOutput> {
    config.validate()?;
    let base = base_dataset(config)?;
    let levels = QuantileLevels::new(config.num_intervals)?;
    let shared = shared_model(config, &levels)?;
    let per_rep = (0..config.reps)
        .into_par_iter()
        .map(|i| run_replication(config, i, base.as_ref(), shared.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ExperimentRecord> = per_rep.into_iter().flatten().collect();
    let summary = summarize(&records, &config.methods);
    Ok(BenchmarkOutput { records, summary })
}

pub fn summarize(records: &[ExperimentRecord], methods: &[Method]) -> Vec<SummaryRow> {
    methods
        .iter()
        .map(|&method| {
            let rows: Vec<&ExperimentRecord> = records.iter().filter(|r| r.method == method).collect();
            let col = |f: fn(&ExperimentRecord) -> f64| Stat::of(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                method,
                reps: rows.len(),
                marginal: col(|r| r.marginal),
                conditional: col(|r| r.conditional),
                width: col(|r| r.width),
                unbounded: col(|r| r.unbounded_count as f64),
                time_per_sample: col(|r| r.time_per_sample_s),
                threshold: col(|r| r.threshold),
            }
        })
        .collect()
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(RESULTS_HEADER)?;
    for r in records {
        out.write_record([
            r.method.to_string(),
            r.seed.to_string(),
            r.marginal.to_string(),
            r.conditional.to_string(),
            r.width.to_string(),
            r.unbounded_count.to_string(),
            r.time_per_sample_s.to_string(),
            r.threshold.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: std::io::Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Config(format!("unexpected results header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

const SUMMARY_HEADER: [&str; 14] = [
    "method",
    "reps",
    "marginal_mean",
    "marginal_sd",
    "conditional_mean",
    "conditional_sd",
    "width_mean",
    "width_sd",
    "unbounded_mean",
    "unbounded_sd",
    "time_per_sample_s_mean",
    "time_per_sample_s_sd",
    "threshold_mean",
    "threshold_sd",
];

fn summary_fields(row: &SummaryRow) -> Vec<String> {
    let mut v = vec![row.method.to_string(), row.reps.to_string()];
    for s in [row.marginal, row.conditional, row.width, row.unbounded, row.time_per_sample, row.threshold] {
        v.push(s.mean.to_string());
        v.push(s.sd.to_string());
    }
    v
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SUMMARY_HEADER)?;
    for row in summary {
        out.write_record(summary_fields(row))?;
    }
    out.flush()?;
    Ok(())
}

/// Plain-text table with `mean (sd)` cells; times in milliseconds.
pub fn summary_table(summary: &[SummaryRow]) -> String {
    let cell = |s: Stat, scale: f64| format!("{:.3} ({:.3})", s.mean * scale, s.sd * scale);
    let header = ["Method", "Marginal", "Condit.", "Width", "Time (ms)", "Unbounded"];
    let rows: Vec<[String; 6]> = summary
        .iter()
        .map(|r| {
            [
                r.method.to_string(),
                cell(r.marginal, 1.0),
                cell(r.conditional, 1.0),
                cell(r.width, 1.0),
                cell(r.time_per_sample, 1e3),
                format!("{:.1}", r.unbounded.mean),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header.map(str::to_owned));
    line(&mut out, &widths.map(|w| "-".repeat(w)));
    for row in &rows {
        line(&mut out, row);
    }
    out
}

impl BenchmarkOutput {
    /// Writes `results.csv`, `summary.csv` and `summary.txt` into `dir`.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_records_csv(&self.records, std::fs::File::create(dir.join("results.csv"))?)?;
        write_summary_csv(&self.summary, std::fs::File::create(dir.join("summary.csv"))?)?;
        std::fs::write(dir.join("summary.txt"), summary_table(&self.summary))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Dataset size; train and calibration each take 40% of it.
    N,
    Symmetry,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(SweepAxis::N),
            "symmetry" => Ok(SweepAxis::Symmetry),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Symmetry => "symmetry",
        }
    }

    pub fn apply(self, config: &ExperimentConfig, value: f64) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            SweepAxis::N => {
                c.n = value.round() as usize;
                c.n_train = (0.4 * value).floor() as usize;
                c.n_cal = c.n_train;
                c.n_test = 0;
            }
            SweepAxis::Symmetry => c.symmetry = value,
        }
        c
    }
}

/// One benchmark per axis value.
pub fn run_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<(f64, BenchmarkOutput)>> {
    if config.source != Source::Synthetic {
        return Err(Error::Config("sweeps need the synthetic source".into()));
    }
    values
        .iter()
        .map(|&v| run_benchmark(&axis.apply(config, v)).map(|out| (v, out)))
        .collect()
}

/// Long-format curve data: one row per axis value and method.
pub fn write_sweep_csv<W: Write>(axis: SweepAxis, runs: &[(f64, BenchmarkOutput)], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec![axis.name()];
    header.extend(SUMMARY_HEADER);
    out.write_record(&header)?;
    for (value, run) in runs {
        for row in &run.summary {
            let mut fields = vec![value.to_string()];
            fields.extend(summary_fields(row));
            out.write_record(&fields)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Monte-Carlo shortest oracle intervals at each `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub x: f64,
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

pub fn oracle_intervals(
    xs: &[f64],
    symmetry: f64,
    alpha: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<Vec<OracleRow>> {
    let mut rng = seeded_stream(seed, stream::TEST_DATA);
    xs.iter()
        .map(|&x| {
            let iv = oracle_shortest_interval(x, symmetry, alpha, mc_samples, &mut rng)?;
            Ok(OracleRow {
                x,
                lo: iv.lo,
                hi: iv.hi,
                width: iv.width(),
            })
        })
        .collect()
}

pub fn write_oracle_csv<W: Write>(rows: &[OracleRow], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["x", "lo", "hi", "width"])?;
    for r in rows {
        out.write_record([r.x, r.lo, r.hi, r.width].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
