//! `cir`: generate synthetic data, run benchmarks and sweeps, and tabulate
//! oracle intervals.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use cir_core::bench::{
    oracle_intervals, run_benchmark, run_sweep, summary_table, write_oracle_csv, write_sweep_csv, SweepAxis,
};
use cir_core::config::{ExperimentConfig, Method, KEYS};
use cir_core::synthetic::{generate, SyntheticConfig};

#[derive(Parser, Debug)]
#[command(name = "cir", version, about = "Conformal interquantile regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset CSV (columns x, y).
    Synth(Common),
    /// Run the configured benchmark and write results, summary CSV and table.
    Bench(Common),
    /// Run one benchmark per value of `n` or `symmetry`.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept key: n or symmetry.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Monte-Carlo shortest oracle intervals on an even grid of x in [0, 1].
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Number of x points.
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Draws per point.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of interquantile intervals.
    #[arg(long = "T", value_name = "T")]
    num_intervals: Option<usize>,
    /// Method to run; repeat for several.
    #[arg(long)]
    method: Vec<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override any config key, e.g. `--set model=knn`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Merges file, `--set` and flags. Only experiment runs need a feasible split.
    fn config(&self, experiment: bool) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        for item in &self.overrides {
            let (key, value) = item
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
            config.set(key.trim(), value.trim())?;
        }
        if let Some(a) = self.alpha {
            config.alpha = a;
        }
        if let Some(t) = self.num_intervals {
            config.num_intervals = t;
        }
        if !self.method.is_empty() {
            config.methods.clone_from(&self.method);
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(r) = self.reps {
            config.reps = r;
        }
        if experiment {
            config.validate()?;
        } else if !(config.alpha > 0.0 && config.alpha < 1.0) {
            bail!("alpha must lie in (0, 1), got {}", config.alpha);
        }
        Ok(config)
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(common) => {
            let config = common.config(false)?;
            let data = generate(&SyntheticConfig {
                n: config.n,
                symmetry: config.symmetry,
                seed: config.seed,
            })?;
            create_out(&common.out)?;
            let path = common.out.join("synthetic.csv");
            data.save_csv(&path)?;
            println!("wrote {} rows to {}", data.len(), path.display());
        }
        Command::Bench(common) => {
            let config = common.config(true)?;
            let output = run_benchmark(&config)?;
            output.write_to_dir(&common.out)?;
            std::fs::write(common.out.join("config.toml"), config.to_toml_string()?)?;
            print!("{}", summary_table(&output.summary));
        }
        Command::Sweep { common, axis, values } => {
            let config = common.config(true)?;
            let runs = run_sweep(&config, axis, &values)?;
            create_out(&common.out)?;
            write_sweep_csv(axis, &runs, std::fs::File::create(common.out.join("sweep.csv"))?)?;
            for (value, run) in &runs {
                println!("{} = {value}", axis.name());
                print!("{}", summary_table(&run.summary));
            }
        }
        Command::Oracle { common, points, samples } => {
            let config = common.config(false)?;
            if points < 2 {
                bail!("--points must be at least 2");
            }
            let xs: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
            let rows = oracle_intervals(&xs, config.symmetry, config.alpha, samples, config.seed)?;
            create_out(&common.out)?;
            let path = common.out.join("oracle.csv");
            write_oracle_csv(&rows, std::fs::File::create(&path)?)?;
            println!("wrote {} oracle intervals to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn keys_help() -> String {
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut text = String::from("Config keys (TOML file or --set KEY=VALUE):\n");
    for (key, doc) in KEYS {
        text.push_str(&format!("  {key:<width$}  {doc}\n"));
    }
    text
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let keys = keys_help();
    let matches = Cli::command()
        .after_help(keys.clone())
        .mut_subcommands(|sub| sub.after_help(keys.clone()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            log::debug!("{e:?}");
            ExitCode::FAILURE
        }
    }
}
