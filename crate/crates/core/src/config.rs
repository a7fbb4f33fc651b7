//! Experiment configuration: one flat TOML table, every key optional.
//!
//! ```toml
//! source = "synthetic"      # or "csv"
//! n = 5000                  # synthetic rows per replication
//! symmetry = 0.0
//! csv_path = "data.csv"
//! target = "y"
//! methods = ["CIR", "CIR+", "CQR", "CHR"]
//! alpha = 0.1
//! T = 100
//! bins = 100                # CHR bins
//! n_train = 2000
//! n_cal = 2000
//! n_test = 0                # 0 takes every remaining row
//! reps = 100
//! seed = 0
//! model = "mlp"             # mlp | knn | oracle
//! delta = 0.1
//! n_directions = 1000
//! rate = 0.0
//! timing = true
//! ```
//!
//! Model hyperparameters use the field names of
//! [`Hyperparameters`](crate::model::Hyperparameters).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::ConformalMethod;
use crate::data::SplitSizes;
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_DELTA, DEFAULT_DIRECTIONS};
use crate::model::{Hyperparameters, ModelKind, ModelSpec};

/// Every method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Cir,
    CirPlus,
    CirMultimodal,
    Cqr,
    Chr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Cir, Method::CirPlus, Method::CirMultimodal, Method::Cqr, Method::Chr];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cir => "CIR",
            Method::CirPlus => "CIR+",
            Method::CirMultimodal => "CIR-multimodal",
            Method::Cqr => "CQR",
            Method::Chr => "CHR",
        }
    }

    pub fn conformal(self) -> Option<ConformalMethod> {
        match self {
            Method::Cir => Some(ConformalMethod::Cir),
            Method::CirPlus => Some(ConformalMethod::CirPlus),
            Method::CirMultimodal => Some(ConformalMethod::CirMultimodal),
            Method::Cqr | Method::Chr => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "cir" => Ok(Method::Cir),
            "cir+" | "cirplus" => Ok(Method::CirPlus),
            "cirmultimodal" | "multimodal" => Ok(Method::CirMultimodal),
            "cqr" => Ok(Method::Cqr),
            "chr" => Ok(Method::Chr),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.as_str().to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: Source,
    pub n: usize,
    pub symmetry: f64,
    pub csv_path: Option<PathBuf>,
    pub target: String,
    pub methods: Vec<Method>,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub num_intervals: usize,
    pub bins: usize,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub reps: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub delta: f64,
    pub n_directions: usize,
    pub rate: f64,
    /// When false, per-sample times are written as 0 so reruns are byte-identical.
    pub timing: bool,

    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub validation_fraction: f64,
    pub neighbors: usize,
    pub mc_samples: usize,
    pub oracle_mesh: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            source: Source::Synthetic,
            n: 5000,
            symmetry: 0.0,
            csv_path: None,
            target: "y".into(),
            methods: vec![Method::Cir, Method::CirPlus, Method::Cqr, Method::Chr],
            alpha: 0.1,
            num_intervals: 100,
            bins: 100,
            n_train: 2000,
            n_cal: 2000,
            n_test: 0,
            reps: 100,
            seed: 0,
            model: ModelKind::PinballMlp,
            delta: DEFAULT_DELTA,
            n_directions: DEFAULT_DIRECTIONS,
            rate: 0.0,
            timing: true,
            hidden: h.hidden,
            learning_rate: h.learning_rate,
            max_epochs: h.max_epochs,
            patience: h.patience,
            batch_size: h.batch_size,
            dropout: h.dropout,
            validation_fraction: h.validation_fraction,
            neighbors: h.neighbors,
            mc_samples: h.mc_samples,
            oracle_mesh: h.oracle_mesh,
        }
    }
}

/// Keys accepted in the config file and by `--set`.
pub const KEYS: &[(&str, &str)] = &[
    ("source", "\"synthetic\" or \"csv\""),
    ("n", "synthetic rows generated per replication"),
    ("symmetry", "probability of flipping the sign of Y (synthetic)"),
    ("csv_path", "CSV file with a header row (csv source)"),
    ("target", "name of the response column (csv source)"),
    ("methods", "subset of CIR, CIR+, CIR-multimodal, CQR, CHR"),
    ("alpha", "miscoverage level in (0, 1)"),
    ("T", "number of interquantile intervals (at least 2)"),
    ("bins", "CHR histogram bins"),
    ("n_train", "training rows"),
    ("n_cal", "calibration rows"),
    ("n_test", "test rows; 0 uses the remainder"),
    ("reps", "replications; seeds are seed + index"),
    ("seed", "base seed"),
    ("model", "mlp, knn or oracle"),
    ("delta", "worst-slab mass"),
    ("n_directions", "worst-slab random directions"),
    ("rate", "greedy fast-forward rate for CIR scoring"),
    ("timing", "record per-sample time; false writes 0"),
    ("hidden", "MLP hidden sizes"),
    ("learning_rate", "MLP Adam step"),
    ("max_epochs", "MLP epoch cap"),
    ("patience", "MLP early-stopping patience in epochs"),
    ("batch_size", "MLP minibatch size"),
    ("dropout", "MLP dropout probability"),
    ("validation_fraction", "MLP validation share of the training rows"),
    ("neighbors", "k for the k-NN model"),
    ("mc_samples", "oracle Monte-Carlo draws per input; 0 is exact"),
    ("oracle_mesh", "exact oracle tabulation nodes; 0 evaluates directly"),
];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one `key=value` override, where `value` is a TOML literal;
    /// bare words are read as strings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_owned()));
        table.insert(key.to_owned(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        Ok(())
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            hidden: self.hidden.clone(),
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            dropout: self.dropout,
            validation_fraction: self.validation_fraction,
            neighbors: self.neighbors,
            mc_samples: self.mc_samples,
            oracle_mesh: self.oracle_mesh,
            symmetry: self.symmetry,
        }
    }

    pub fn model_spec(&self, seed: u64) -> ModelSpec {
        ModelSpec::new(self.model, seed).with_hyper(self.hyperparameters())
    }

    /// Split sizes for a dataset of `available` rows.
    pub fn split_sizes(&self, available: usize) -> Result<SplitSizes> {
        let used = self.n_train + self.n_cal;
        let test = if self.n_test == 0 {
            available.checked_sub(used).ok_or(Error::InfeasibleSplit {
                requested: used,
                available,
            })?
        } else {
            self.n_test
        };
        let sizes = SplitSizes {
            train: self.n_train,
            cal: self.n_cal,
            test,
        };
        if sizes.total() > available || test == 0 {
            return Err(Error::InfeasibleSplit {
                requested: sizes.total().max(used + 1),
                available,
            });
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.num_intervals < 2 {
            return bad(format!("T must be at least 2, got {}", self.num_intervals));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.methods.contains(&Method::Chr) && self.bins < 2 {
            return bad(format!("bins must be at least 2, got {}", self.bins));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.n_train == 0 || self.n_cal == 0 {
            return bad("n_train and n_cal must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.rate) {
            return bad(format!("rate must lie in [0, 1], got {}", self.rate));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if self.n_directions == 0 {
            return bad("n_directions must be at least 1".into());
        }
        match self.source {
            Source::Synthetic => {
                if !(0.0..=1.0).contains(&self.symmetry) {
                    return bad(format!("symmetry must lie in [0, 1], got {}", self.symmetry));
                }
                self.split_sizes(self.n)?;
            }
            Source::Csv => {
                if self.csv_path.is_none() {
                    return bad("csv source needs csv_path".into());
                }
                if self.model == ModelKind::SyntheticOracle {
                    return bad("the oracle model only applies to synthetic data".into());
                }
            }
        }
        self.hyperparameters().validate(self.model)
    }
}
