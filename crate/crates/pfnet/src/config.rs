//! Run configuration: defaults, flat `key = value` config files, and
//! validation. Command-line flags override file values; the file overrides
//! defaults. Only `data` and `horizon` have no default.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required setting '{0}'")]
    Missing(&'static str),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Validation-selection metric; lower is better for both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMetric {
    Rse,
    Rae,
}

impl FromStr for SelectMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rse" => Ok(SelectMetric::Rse),
            "rae" => Ok(SelectMetric::Rae),
            other => Err(format!("unknown selection metric '{other}' (expected rse or rae)")),
        }
    }
}

impl fmt::Display for SelectMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectMetric::Rse => write!(f, "rse"),
            SelectMetric::Rae => write!(f, "rae"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub model: String,
    pub horizon: usize,
    pub window: usize,
    pub depth: usize,
    pub channels: usize,
    pub hw: usize,
    pub mlp_hidden: usize,
    pub c1: f64,
    pub c2: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub select: SelectMetric,
    pub out: PathBuf,
    pub split_train: f64,
    pub split_val: f64,
    pub var_lags: Vec<usize>,
}

impl RunConfig {
    pub fn new(data: impl Into<PathBuf>, horizon: usize) -> RunConfig {
        RunConfig {
            data: data.into(),
            model: "pfnet".into(),
            horizon,
            window: 32,
            depth: 2,
            channels: 32,
            hw: 8,
            mlp_hidden: 64,
            c1: 1.0,
            c2: 1.0,
            lr: 0.001,
            batch: 128,
            epochs: 1000,
            seed: 1,
            select: SelectMetric::Rse,
            out: PathBuf::from("runs"),
            split_train: 0.6,
            split_val: 0.2,
            var_lags: vec![1, 2, 4, 8],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizon < 1 {
            return Err(ConfigError::Invalid { field: "horizon", msg: "must be at least 1".into() });
        }
        if !(1..=512).contains(&self.window) {
            return Err(ConfigError::Invalid {
                field: "window",
                msg: format!("must be in 1..=512, got {}", self.window),
            });
        }
        if self.batch < 1 {
            return Err(ConfigError::Invalid { field: "batch", msg: "must be at least 1".into() });
        }
        if self.epochs < 1 {
            return Err(ConfigError::Invalid { field: "epochs", msg: "must be at least 1".into() });
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(ConfigError::Invalid { field: "c1/c2", msg: "loss weights must be nonnegative".into() });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ConfigError::Invalid { field: "lr", msg: "learning rate must be positive".into() });
        }
        let test = 1.0 - self.split_train - self.split_val;
        if self.split_train <= 0.0 || self.split_val <= 0.0 || test <= 0.0 {
            return Err(ConfigError::Invalid {
                field: "split",
                msg: format!(
                    "fractions must be positive and sum below 1: train {} val {}",
                    self.split_train, self.split_val
                ),
            });
        }
        if self.var_lags.is_empty() || self.var_lags.iter().any(|&l| l == 0) {
            return Err(ConfigError::Invalid { field: "var_lags", msg: "need at least one nonzero lag".into() });
        }
        Ok(())
    }

    pub fn model_config(&self, n: usize) -> ModelConfig {
        ModelConfig {
            n,
            window: self.window,
            horizon: self.horizon,
            depth: self.depth,
            channels: self.channels,
            hw: self.hw,
            mlp_hidden: self.mlp_hidden,
            c1: self.c1,
            c2: self.c2,
        }
    }
}

/// Settings parsed from a config file or collected from CLI flags; `None`
/// means "not given here".
#[derive(Debug, Default, Clone)]
pub struct PartialConfig {
    pub data: Option<PathBuf>,
    pub model: Option<String>,
    pub horizon: Option<usize>,
    pub window: Option<usize>,
    pub depth: Option<usize>,
    pub channels: Option<usize>,
    pub hw: Option<usize>,
    pub mlp_hidden: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub select: Option<SelectMetric>,
    pub out: Option<PathBuf>,
    pub split_train: Option<f64>,
    pub split_val: Option<f64>,
    pub var_lags: Option<Vec<usize>>,
}

impl PartialConfig {
    /// Flat `key = value` file; `#` starts a comment.
    pub fn from_file(path: &std::path::Path) -> Result<PartialConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file = path.display().to_string();
        let mut out = PartialConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                file: file.clone(),
                line: line_no,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            out.set(key, value).map_err(|msg| ConfigError::Parse {
                file: file.clone(),
                line: line_no,
                msg,
            })?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value '{value}' for {key}"))
        }
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "model" => self.model = Some(value.to_string()),
            "horizon" => self.horizon = Some(num(key, value)?),
            "window" => self.window = Some(num(key, value)?),
            "depth" => self.depth = Some(num(key, value)?),
            "channels" => self.channels = Some(num(key, value)?),
            "hw" => self.hw = Some(num(key, value)?),
            "mlp_hidden" => self.mlp_hidden = Some(num(key, value)?),
            "c1" => self.c1 = Some(num(key, value)?),
            "c2" => self.c2 = Some(num(key, value)?),
            "lr" => self.lr = Some(num(key, value)?),
            "batch" => self.batch = Some(num(key, value)?),
            "epochs" => self.epochs = Some(num(key, value)?),
            "seed" => self.seed = Some(num(key, value)?),
            "select" => self.select = Some(value.parse()?),
            "out" => self.out = Some(PathBuf::from(value)),
            "split_train" => self.split_train = Some(num(key, value)?),
            "split_val" => self.split_val = Some(num(key, value)?),
            "var_lags" => {
                let lags: Result<Vec<usize>, _> = value.split(',').map(|s| s.trim().parse()).collect();
                self.var_lags = Some(lags.map_err(|_| format!("bad value '{value}' for var_lags"))?);
            }
            other => return Err(format!("unknown setting '{other}'")),
        }
        Ok(())
    }

    /// Overlay `self` onto `base`, taking every present field.
    pub fn apply(&self, base: &mut RunConfig) {
        let s = self.clone();
        if let Some(v) = s.data { base.data = v }
        if let Some(v) = s.model { base.model = v }
        if let Some(v) = s.horizon { base.horizon = v }
        if let Some(v) = s.window { base.window = v }
        if let Some(v) = s.depth { base.depth = v }
        if let Some(v) = s.channels { base.channels = v }
        if let Some(v) = s.hw { base.hw = v }
        if let Some(v) = s.mlp_hidden { base.mlp_hidden = v }
        if let Some(v) = s.c1 { base.c1 = v }
        if let Some(v) = s.c2 { base.c2 = v }
        if let Some(v) = s.lr { base.lr = v }
        if let Some(v) = s.batch { base.batch = v }
        if let Some(v) = s.epochs { base.epochs = v }
        if let Some(v) = s.seed { base.seed = v }
        if let Some(v) = s.select { base.select = v }
        if let Some(v) = s.out { base.out = v }
        if let Some(v) = s.split_train { base.split_train = v }
        if let Some(v) = s.split_val { base.split_val = v }
        if let Some(v) = s.var_lags { base.var_lags = v }
    }

    /// Resolve defaults ← file ← flags. `data` and `horizon` must be present
    /// somewhere.
    pub fn resolve(file: Option<PartialConfig>, flags: PartialConfig) -> Result<RunConfig, ConfigError> {
        let data = flags
            .data
            .clone()
            .or_else(|| file.as_ref().and_then(|f| f.data.clone()))
            .ok_or(ConfigError::Missing("data"))?;
        let horizon = flags
            .horizon
            .or_else(|| file.as_ref().and_then(|f| f.horizon))
            .ok_or(ConfigError::Missing("horizon"))?;
        let mut cfg = RunConfig::new(data, horizon);
        if let Some(f) = file {
            f.apply(&mut cfg);
        }
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}
