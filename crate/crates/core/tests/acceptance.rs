//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;

use cir_core::baselines::{
    chr_build, chr_calibrate, chr_predict, chr_score, cqr_calibrate, cqr_score, ChrCalibration,
};
use cir_core::bench::{
    read_records_csv, run_benchmark, run_method, write_records_csv, BenchmarkOutput, MethodParams,
    RESULTS_HEADER,
};
use cir_core::conformal::{
    calibrate_cir, calibrate_cirplus, calibrate_multimodal, predict_cir, predict_cirplus,
    predict_multimodal, CalibrationResult,
};
use cir_core::config::{ExperimentConfig, Method, Source};
use cir_core::interquantile::{
    cir_score, cirplus_score, greedy_nested_windows, multimodal_rank_score,
    shortest_window_bruteforce, WidthScale,
};
use cir_core::model::{ModelKind, QuantileRegressor, SyntheticOracle};
use cir_core::rng::seeded;
use cir_core::synthetic::exact_skewness;
use cir_core::{calibration_rank, ConformalMethod, QuantileGrid, QuantileLevels};

const ALPHA: f64 = 0.1;

const CIR_COVERAGE: (f64, f64) = (0.89, 0.92);
const CIRPLUS_COVERAGE: (f64, f64) = (0.885, 0.915);
const MLP_REPS: usize = 100;

const OVERCOVERAGE: (f64, f64) = (0.0, 0.015);
const ORACLE_REPS: usize = 200;
/// Exact oracle quantiles tabulated on this many nodes in `[0, 1]`; the
/// interpolation error is below 1e-3 in every quantile.
const ORACLE_MESH: usize = 20_001;

const K_HAT_TARGET: i64 = 90;
const K_HAT_TOLERANCE: i64 = 3;
const K_HAT_REPS: usize = 100;
const K_HAT_MIN_FRACTION: f64 = 0.95;
/// Pilot run (base seed 10000, 100 replications, oracle, n_cal = 5000):
/// every `k̂` fell in 90..=92.
const PILOT_K_HAT: [(i64, usize); 3] = [(90, 12), (91, 77), (92, 11)];

const CQR_WIDTH_RATIO: f64 = 0.80;

/// Symmetry levels whose exact skewness is about 2.70 and 0.66.
const SKEWED: f64 = 0.0;
const MILD: f64 = 0.2979;
const MILD_REPS: usize = 30;

const CHR_BINS: usize = 1000;
const MIN_SPEEDUP: f64 = 10.0;

const PROFILES: usize = 1000;
const DUALITY_RUNS: usize = 200;
const INVERSION_TRIPLES: usize = 100_000;

const CSV_REPS: usize = 20;
const CSV_MIN_COVERAGE: f64 = 0.88;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean_of(out: &BenchmarkOutput, method: Method, f: fn(&cir_core::bench::SummaryRow) -> f64) -> f64 {
    out.summary
        .iter()
        .find(|r| r.method == method)
        .map(f)
        .expect("method was run")
}

fn synthetic_mlp(symmetry: f64, reps: usize, methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        n: 7000,
        n_train: 2500,
        n_cal: 2500,
        n_test: 2000,
        symmetry,
        reps,
        methods,
        alpha: ALPHA,
        ..Default::default()
    }
}

fn oracle_config() -> ExperimentConfig {
    ExperimentConfig {
        n: 10_001,
        n_train: 1,
        n_cal: 5000,
        n_test: 5000,
        reps: ORACLE_REPS,
        methods: vec![Method::Cir],
        model: ModelKind::SyntheticOracle,
        oracle_mesh: ORACLE_MESH,
        n_directions: 10,
        alpha: ALPHA,
        ..Default::default()
    }
}

fn criterion_1(run: &BenchmarkOutput) -> Outcome {
    let cir = mean_of(run, Method::Cir, |r| r.marginal.mean);
    let plus = mean_of(run, Method::CirPlus, |r| r.marginal.mean);
    let pass = (CIR_COVERAGE.0..=CIR_COVERAGE.1).contains(&cir)
        && (CIRPLUS_COVERAGE.0..=CIRPLUS_COVERAGE.1).contains(&plus);
    outcome(pass, format!("marginal coverage CIR {cir:.4}, CIR+ {plus:.4} over {MLP_REPS} reps"))
}

fn criterion_2(run: &BenchmarkOutput) -> Outcome {
    let gap = mean_of(run, Method::Cir, |r| r.marginal.mean) - (1.0 - ALPHA);
    let pass = (OVERCOVERAGE.0..=OVERCOVERAGE.1).contains(&gap);
    outcome(pass, format!("CIR overcoverage {gap:.5} over {ORACLE_REPS} reps"))
}

fn criterion_3(run: &BenchmarkOutput) -> Outcome {
    let thresholds: Vec<i64> = run
        .records
        .iter()
        .filter(|r| r.method == Method::Cir)
        .take(K_HAT_REPS)
        .map(|r| r.threshold as i64)
        .collect();
    let close = thresholds
        .iter()
        .filter(|&&k| (k - K_HAT_TARGET).abs() <= K_HAT_TOLERANCE)
        .count();
    let fraction = close as f64 / thresholds.len() as f64;
    let (lo, hi) = (thresholds.iter().min().unwrap(), thresholds.iter().max().unwrap());
    outcome(
        fraction >= K_HAT_MIN_FRACTION,
        format!("|k̂ - 90| <= 3 in {fraction:.2} of {} reps, range {lo}..={hi} (pilot {PILOT_K_HAT:?})", thresholds.len()),
    )
}

fn criterion_4(run: &BenchmarkOutput) -> Outcome {
    let w = |m| mean_of(run, m, |r| r.width.mean);
    let (cir, plus, cqr) = (w(Method::Cir), w(Method::CirPlus), w(Method::Cqr));
    let pass = plus <= cir && cir <= CQR_WIDTH_RATIO * cqr;
    outcome(pass, format!("widths CIR+ {plus:.3}, CIR {cir:.3}, CQR {cqr:.3} (ratio {:.3})", cir / cqr))
}

fn criterion_5(skewed: &BenchmarkOutput) -> Outcome {
    let gap = |run: &BenchmarkOutput| {
        let cqr = mean_of(run, Method::Cqr, |r| r.width.mean);
        (cqr - mean_of(run, Method::Cir, |r| r.width.mean)) / cqr
    };
    let mild = run_benchmark(&synthetic_mlp(MILD, MILD_REPS, vec![Method::Cir, Method::Cqr])).expect("mild run");
    let (g_skewed, g_mild) = (gap(skewed), gap(&mild));
    let (s_skewed, s_mild) = (exact_skewness(SKEWED, 200).unwrap(), exact_skewness(MILD, 200).unwrap());
    outcome(
        g_mild < g_skewed,
        format!("relative CQR-CIR width gap {g_skewed:.3} at skew {s_skewed:.2}, {g_mild:.3} at skew {s_mild:.2}"),
    )
}

fn criterion_6() -> Outcome {
    let levels = QuantileLevels::new(100).unwrap();
    let oracle = SyntheticOracle::tabulated(&levels, 0.0, ORACLE_MESH).unwrap();
    let data = cir_core::synthetic::generate(&cir_core::synthetic::SyntheticConfig {
        n: 4000,
        symmetry: 0.0,
        seed: 6,
    })
    .unwrap();
    let grids: Vec<QuantileGrid> = data
        .features()
        .rows()
        .into_iter()
        .map(|row| oracle.predict_row(row).unwrap())
        .collect();
    let (cal, test) = grids.split_at(2000);
    let y = &data.targets()[..2000];
    let params = MethodParams { alpha: ALPHA, bins: CHR_BINS, rate: 0.0, scale: None };
    let best = |m: Method| {
        (0..3)
            .map(|_| run_method(m, cal, y, test, &params).unwrap().seconds_per_sample)
            .fold(f64::INFINITY, f64::min)
    };
    let (t_cir, t_chr) = (best(Method::Cir), best(Method::Chr));
    let ratio = t_chr / t_cir;
    outcome(
        ratio >= MIN_SPEEDUP,
        format!("per-sample time CHR(B=1000) {:.3e}s / CIR(T=100) {:.3e}s = {ratio:.1}x", t_chr, t_cir),
    )
}

fn grid_from_widths(widths: &[f64]) -> QuantileGrid {
    let mut q = Vec::with_capacity(widths.len() + 1);
    q.push(0.0);
    for w in widths {
        q.push(q[q.len() - 1] + w);
    }
    QuantileGrid::new(q).unwrap()
}

/// Strictly decreasing then strictly increasing widths.
fn quasi_convex<R: Rng>(rng: &mut R, t: usize) -> Vec<f64> {
    let valley = rng.random_range(0..t);
    let mut w = vec![0.0; t];
    w[valley] = rng.random_range(0.01..1.0);
    for i in (0..valley).rev() {
        w[i] = w[i + 1] + rng.random_range(0.001..1.0);
    }
    for i in valley + 1..t {
        w[i] = w[i - 1] + rng.random_range(0.001..1.0);
    }
    w
}

fn criterion_7() -> Outcome {
    let mut rng = seeded(7);
    let mut mismatches = 0;
    let mut worse = 0;
    for _ in 0..PROFILES {
        let t = rng.random_range(2..=20);
        let g = grid_from_widths(&quasi_convex(&mut rng, t));
        for (k, w) in greedy_nested_windows(&g).iter().enumerate() {
            if *w != shortest_window_bruteforce(&g, k + 1).unwrap() {
                mismatches += 1;
            }
        }
        let widths: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
        let g = grid_from_widths(&widths);
        for (k, w) in greedy_nested_windows(&g).iter().enumerate() {
            if w.width() < shortest_window_bruteforce(&g, k + 1).unwrap().width() {
                worse += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && worse == 0,
        format!("{PROFILES} quasi-convex profiles: {mismatches} mismatches; {PROFILES} arbitrary: {worse} greedy windows shorter than brute force"),
    )
}

/// Random grids with a mix of smooth, spiky and tied widths.
fn random_grid<R: Rng>(rng: &mut R, t: usize) -> QuantileGrid {
    let widths: Vec<f64> = (0..t)
        .map(|_| match rng.random_range(0..4) {
            0 => rng.random_range(0.0..1.0),
            1 => rng.random_range(0.0..1.0f64).powi(4) * 10.0,
            2 => 0.25,
            _ => rng.random_range(0.01..0.1),
        })
        .collect();
    let shift = rng.random_range(-5.0..5.0);
    grid_from_widths(&widths).affine(1.0, shift)
}

fn random_y<R: Rng>(rng: &mut R, g: &QuantileGrid) -> f64 {
    if rng.random_bool(0.1) {
        g.values()[rng.random_range(0..g.values().len())]
    } else {
        let (lo, hi) = (g.lower(), g.upper());
        let pad = 0.1 * (hi - lo) + 1e-3;
        rng.random_range(lo - pad..hi + pad)
    }
}

fn with_threshold(cal: &CalibrationResult, threshold: f64) -> CalibrationResult {
    CalibrationResult { threshold, ..cal.clone() }
}

/// Calibration points covered at the threshold reach `r_α`; one step
/// below, they do not. Membership equals `score ≤ threshold` pointwise.
fn duality_run<R: Rng>(rng: &mut R) -> Result<(), String> {
    let t = rng.random_range(4..=30);
    let n = rng.random_range(20..=400);
    let alpha = rng.random_range(0.05..0.5);
    let grids: Vec<QuantileGrid> = (0..n).map(|_| random_grid(rng, t)).collect();
    let ys: Vec<f64> = grids.iter().map(|g| random_y(rng, g)).collect();
    let rank = calibration_rank(alpha, n).unwrap();
    let check = |name: &str, scores_ok: Vec<bool>, below: Vec<bool>, member: Vec<bool>, member_below: Vec<bool>| {
        let (count, count_below) = (scores_ok.iter().filter(|&&b| b).count(), below.iter().filter(|&&b| b).count());
        if count < rank || count_below >= rank {
            return Err(format!("{name}: {count} at threshold, {count_below} below, r_α = {rank}"));
        }
        if member != scores_ok || member_below != below {
            return Err(format!("{name}: membership differs from score comparison"));
        }
        Ok(())
    };

    let scores: Vec<_> = grids.iter().zip(&ys).map(|(g, &y)| cir_score(g, y)).collect();
    let cal = calibrate_cir(&scores, alpha, t).map_err(|e| e.to_string())?;
    let k = cal.threshold as usize;
    let member = |c: &CalibrationResult| -> Vec<bool> {
        grids.iter().zip(&ys).map(|(g, &y)| c.threshold >= 1.0 && predict_cir(g, c).unwrap().contains(y)).collect()
    };
    check(
        "CIR",
        scores.iter().map(|s| s.value() <= k).collect(),
        scores.iter().map(|s| s.value() < k).collect(),
        member(&cal),
        member(&with_threshold(&cal, (k - 1) as f64)),
    )?;

    let c = grids.iter().flat_map(|g| g.values().windows(2).map(|w| w[1] - w[0])).fold(0.0, f64::max) * (1.0 + 1e-6);
    let scale = WidthScale::new(c).map_err(|e| e.to_string())?;
    let plus: Vec<_> = grids.iter().zip(&ys).map(|(g, &y)| cirplus_score(g, y, scale)).collect();
    let cal = calibrate_cirplus(&plus, alpha, t, scale).map_err(|e| e.to_string())?;
    let s_hat = cal.threshold;
    let below_hat = s_hat.next_down();
    let member = |c: &CalibrationResult| -> Vec<bool> {
        grids.iter().zip(&ys).map(|(g, &y)| predict_cirplus(g, c).unwrap().contains(y)).collect()
    };
    if below_hat >= 1.0 {
        check(
            "CIR+",
            plus.iter().map(|s| s.value <= s_hat).collect(),
            plus.iter().map(|s| s.value <= below_hat).collect(),
            member(&cal),
            member(&with_threshold(&cal, below_hat)),
        )?;
    }

    let ranks: Vec<usize> = grids.iter().zip(&ys).map(|(g, &y)| multimodal_rank_score(g, y)).collect();
    let cal = calibrate_multimodal(&ranks, alpha, t).map_err(|e| e.to_string())?;
    let cut = cal.threshold as usize;
    let member = |c: &CalibrationResult| -> Vec<bool> {
        grids.iter().zip(&ys).map(|(g, &y)| c.threshold >= 1.0 && predict_multimodal(g, c).unwrap().contains(y)).collect()
    };
    check(
        "CIR-multimodal",
        ranks.iter().map(|&r| r <= cut).collect(),
        ranks.iter().map(|&r| r < cut).collect(),
        member(&cal),
        member(&with_threshold(&cal, (cut - 1) as f64)),
    )?;

    let bins = rng.random_range(2..=60);
    let cal = chr_calibrate(&grids, &ys, alpha, bins).map_err(|e| e.to_string())?;
    let chr: Vec<usize> = grids.iter().zip(&ys).map(|(g, &y)| chr_score(&chr_build(g, bins).unwrap(), y)).collect();
    let member = |c: &ChrCalibration| -> Vec<bool> {
        grids.iter().zip(&ys).map(|(g, &y)| c.threshold >= 1 && chr_predict(g, c).unwrap().contains(y)).collect()
    };
    check(
        "CHR",
        chr.iter().map(|&s| s <= cal.threshold).collect(),
        chr.iter().map(|&s| s < cal.threshold).collect(),
        member(&cal),
        member(&ChrCalibration { threshold: cal.threshold - 1, ..cal }),
    )?;

    let cal = cqr_calibrate(&grids, &ys, alpha).map_err(|e| e.to_string())?;
    let cqr: Vec<f64> = grids.iter().zip(&ys).map(|(g, &y)| cqr_score(g, y, alpha).unwrap()).collect();
    let at = cqr.iter().filter(|&&s| s <= cal.q_offset).count();
    let below = cqr.iter().filter(|&&s| s <= cal.q_offset.next_down()).count();
    if at < rank || below >= rank {
        return Err(format!("CQR: {at} at threshold, {below} below, r_α = {rank}"));
    }
    Ok(())
}

fn criterion_8() -> Outcome {
    let mut rng = seeded(8);
    let failures: Vec<String> = (0..DUALITY_RUNS).filter_map(|_| duality_run(&mut rng).err()).collect();
    outcome(
        failures.is_empty(),
        format!(
            "{DUALITY_RUNS} calibration runs x 5 methods, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = seeded(9);
    let mut failures = 0;
    let mut at_boundary = 0;
    for _ in 0..INVERSION_TRIPLES {
        let t = rng.random_range(2..=30);
        let g = random_grid(&mut rng, t);
        let max_width = g.values().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let c = (max_width * rng.random_range(1.0..2.0) * (1.0 + 1e-6)).max(1e-6);
        let scale = WidthScale::new(c).unwrap();
        let y = random_y(&mut rng, &g);
        // Half the thresholds are scores of other responses, so ties are exercised.
        let s_hat = if rng.random_bool(0.5) {
            let other = random_y(&mut rng, &g);
            cirplus_score(&g, other, scale).value.max(1.0)
        } else {
            rng.random_range(1.0..=(t + 1) as f64)
        };
        let cal = CalibrationResult {
            method: ConformalMethod::CirPlus,
            threshold: s_hat,
            alpha: ALPHA,
            num_intervals: t,
            scale: Some(scale),
            n_cal: 1,
        };
        let score = cirplus_score(&g, y, scale).value;
        at_boundary += usize::from(score == s_hat);
        if predict_cirplus(&g, &cal).unwrap().contains(y) != (score <= s_hat) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("{INVERSION_TRIPLES} triples ({at_boundary} with score equal to threshold), {failures} mismatches"),
    )
}

fn criterion_10() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic_5000.csv");
    let config = ExperimentConfig {
        source: Source::Csv,
        csv_path: Some(path),
        target: "y".into(),
        n_train: 2000,
        n_cal: 2000,
        n_test: 1000,
        reps: CSV_REPS,
        methods: Method::ALL.to_vec(),
        alpha: ALPHA,
        ..Default::default()
    };
    let run = match run_benchmark(&config) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline error: {e}")),
    };
    let mut buffer = Vec::new();
    write_records_csv(&run.records, &mut buffer).unwrap();
    let header_ok = String::from_utf8_lossy(&buffer).lines().next() == Some(&RESULTS_HEADER.join(","));
    let reparsed = read_records_csv(buffer.as_slice()).map(|r| r == run.records).unwrap_or(false);
    let coverage: Vec<String> = run
        .summary
        .iter()
        .map(|r| format!("{} {:.3}", r.method, r.marginal.mean))
        .collect();
    let covered = run.summary.iter().all(|r| r.marginal.mean >= CSV_MIN_COVERAGE);
    let rows_ok = run.records.len() == CSV_REPS * Method::ALL.len();
    outcome(
        header_ok && reparsed && covered && rows_ok,
        format!("{} rows, schema {}, coverage {}", run.records.len(), if header_ok && reparsed { "ok" } else { "broken" }, coverage.join(", ")),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |id: usize, o: Outcome| {
        println!("{} criterion {id}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, o));
    };

    let mlp = run_benchmark(&synthetic_mlp(
        SKEWED,
        MLP_REPS,
        vec![Method::Cir, Method::CirPlus, Method::Cqr, Method::Chr],
    ))
    .expect("MLP benchmark");
    report(1, criterion_1(&mlp));
    let oracle = run_benchmark(&oracle_config()).expect("oracle benchmark");
    report(2, criterion_2(&oracle));
    report(3, criterion_3(&oracle));
    report(4, criterion_4(&mlp));
    report(5, criterion_5(&mlp));
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());
    report(10, criterion_10());

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| *id).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.0}s",
        results.len() - failed.len(),
        failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
