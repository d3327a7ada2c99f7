//! Run configuration: a flat `key = value` file whose entries can be
//! overridden from the command line. Blank lines and `#` comments are
//! ignored. [`RunConfig::to_kv`] writes every key back out, so a saved echo
//! reloads to the same configuration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lsta_core::cells::CellKind;
use lsta_core::network::Direction;
use lsta_core::optim::{OptimizerConfig, OptimizerKind};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    Lstm,
    Lsta,
    Gru,
    Bilstm,
}

impl ModelChoice {
    pub fn kind(self) -> CellKind {
        match self {
            ModelChoice::Lstm | ModelChoice::Bilstm => CellKind::Lstm,
            ModelChoice::Lsta => CellKind::Lsta,
            ModelChoice::Gru => CellKind::Gru,
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            ModelChoice::Bilstm => Direction::Bidirectional,
            _ => Direction::Forward,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Lstm => "lstm",
            ModelChoice::Lsta => "lsta",
            ModelChoice::Gru => "gru",
            ModelChoice::Bilstm => "bilstm",
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lstm" => Ok(ModelChoice::Lstm),
            "lsta" => Ok(ModelChoice::Lsta),
            "gru" => Ok(ModelChoice::Gru),
            "bilstm" => Ok(ModelChoice::Bilstm),
            other => Err(format!("expected lstm, lsta, gru or bilstm, got `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetChoice {
    Mnist,
    Fashion,
    Synth,
}

impl DatasetChoice {
    pub fn name(self) -> &'static str {
        match self {
            DatasetChoice::Mnist => "mnist",
            DatasetChoice::Fashion => "fashion",
            DatasetChoice::Synth => "synth",
        }
    }

    pub fn classes(self) -> usize {
        match self {
            DatasetChoice::Mnist | DatasetChoice::Fashion => 10,
            DatasetChoice::Synth => 2,
        }
    }
}

impl fmt::Display for DatasetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetChoice::Mnist),
            "fashion" => Ok(DatasetChoice::Fashion),
            "synth" => Ok(DatasetChoice::Synth),
            other => Err(format!("expected mnist, fashion or synth, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub hidden: usize,
    pub dataset: DatasetChoice,
    /// Directory holding the four IDX files (plain or `.gz`).
    pub data_dir: PathBuf,
    pub train_n: usize,
    pub test_n: usize,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerConfig,
    /// Parameter initialisation and batch order.
    pub seed: u64,
    /// Subset selection and synthetic data generation.
    pub data_seed: u64,
    pub warm_start_as_lstm: bool,
    pub workers: usize,
    /// Record elapsed milliseconds in `wall_ms`; otherwise the column is 0
    /// so that metrics files stay byte-comparable across runs.
    pub wall_clock: bool,
    pub out: PathBuf,
    pub synth_steps: usize,
    pub synth_features: usize,
    pub synth_signal_len: usize,
    pub synth_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelChoice::Lsta,
            hidden: 64,
            dataset: DatasetChoice::Mnist,
            data_dir: PathBuf::from("data/mnist-subset"),
            train_n: 5000,
            test_n: 1000,
            epochs: 5,
            batch: 64,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            data_seed: 0,
            warm_start_as_lstm: false,
            workers: 1,
            wall_clock: false,
            out: PathBuf::from("runs/latest"),
            synth_steps: 50,
            synth_features: 4,
            synth_signal_len: 5,
            synth_noise: 0.3,
        }
    }
}

pub const KEYS: [&str; 25] = [
    "model",
    "hidden",
    "dataset",
    "data_dir",
    "train_n",
    "test_n",
    "epochs",
    "batch",
    "optimizer",
    "lr",
    "momentum",
    "beta1",
    "beta2",
    "epsilon",
    "clip_norm",
    "seed",
    "data_seed",
    "warm_start_as_lstm",
    "workers",
    "wall_clock",
    "out",
    "synth_steps",
    "synth_features",
    "synth_signal_len",
    "synth_noise",
];

fn parse<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::config(field, format!("`{value}`: {e}")))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliError::config(field, format!("expected true or false, got `{other}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "model" => self.model = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "dataset" => self.dataset = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_n" => self.train_n = parse(key, value)?,
            "test_n" => self.test_n = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "optimizer" => {
                self.optimizer.kind =
                    value.parse::<OptimizerKind>().map_err(|e| CliError::config(key, e))?
            }
            "lr" => self.optimizer.learning_rate = parse(key, value)?,
            "momentum" => self.optimizer.momentum = parse(key, value)?,
            "beta1" => self.optimizer.beta1 = parse(key, value)?,
            "beta2" => self.optimizer.beta2 = parse(key, value)?,
            "epsilon" => self.optimizer.epsilon = parse(key, value)?,
            "clip_norm" => {
                self.optimizer.clip_norm = match value {
                    "none" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "warm_start_as_lstm" => self.warm_start_as_lstm = parse_bool(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "wall_clock" => self.wall_clock = parse_bool(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "synth_steps" => self.synth_steps = parse(key, value)?,
            "synth_features" => self.synth_features = parse(key, value)?,
            "synth_signal_len" => self.synth_signal_len = parse(key, value)?,
            "synth_noise" => self.synth_noise = parse(key, value)?,
            other => return Err(CliError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let o = &self.optimizer;
        Ok(match key {
            "model" => self.model.to_string(),
            "hidden" => self.hidden.to_string(),
            "dataset" => self.dataset.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "train_n" => self.train_n.to_string(),
            "test_n" => self.test_n.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch" => self.batch.to_string(),
            "optimizer" => o.kind.to_string(),
            "lr" => o.learning_rate.to_string(),
            "momentum" => o.momentum.to_string(),
            "beta1" => o.beta1.to_string(),
            "beta2" => o.beta2.to_string(),
            "epsilon" => o.epsilon.to_string(),
            "clip_norm" => o.clip_norm.map_or_else(|| "none".to_string(), |c| c.to_string()),
            "seed" => self.seed.to_string(),
            "data_seed" => self.data_seed.to_string(),
            "warm_start_as_lstm" => self.warm_start_as_lstm.to_string(),
            "workers" => self.workers.to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            "out" => self.out.display().to_string(),
            "synth_steps" => self.synth_steps.to_string(),
            "synth_features" => self.synth_features.to_string(),
            "synth_signal_len" => self.synth_signal_len.to_string(),
            "synth_noise" => self.synth_noise.to_string(),
            other => return Err(CliError::UnknownKey(other.to_string())),
        })
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_kv(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::ConfigSyntax {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv(&fs::read_to_string(path)?, path)?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn classes(&self) -> usize {
        self.dataset.classes()
    }

    pub fn validate(&self) -> Result<()> {
        let at_least_one = [
            ("hidden", self.hidden),
            ("train_n", self.train_n),
            ("test_n", self.test_n),
            ("batch", self.batch),
            ("workers", self.workers),
        ];
        for (field, v) in at_least_one {
            if v == 0 {
                return Err(CliError::config(field, "must be at least 1"));
            }
        }
        let o = &self.optimizer;
        let ranges = [
            ("lr", o.learning_rate > 0.0 && o.learning_rate.is_finite()),
            ("momentum", (0.0..1.0).contains(&o.momentum)),
            ("beta1", (0.0..1.0).contains(&o.beta1)),
            ("beta2", (0.0..1.0).contains(&o.beta2)),
            ("epsilon", o.epsilon > 0.0),
            ("clip_norm", o.clip_norm.is_none_or(|c| c > 0.0)),
        ];
        for (field, ok) in ranges {
            if !ok {
                return Err(CliError::config(field, format!("out of range: {}", self.get(field)?)));
            }
        }
        if self.warm_start_as_lstm && self.model != ModelChoice::Lsta {
            return Err(CliError::config("warm_start_as_lstm", "only applies to model = lsta"));
        }
        match self.dataset {
            DatasetChoice::Synth => {
                if self.synth_features < 2 {
                    return Err(CliError::config("synth_features", "must be at least 2"));
                }
                if self.synth_signal_len == 0 || self.synth_signal_len >= self.synth_steps {
                    return Err(CliError::config("synth_signal_len", "must be in 1..synth_steps"));
                }
                if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
                    return Err(CliError::config("synth_noise", "must be finite and >= 0"));
                }
            }
            DatasetChoice::Mnist | DatasetChoice::Fashion => {
                if !self.data_dir.is_dir() {
                    return Err(CliError::config(
                        "data_dir",
                        format!("{} is not a directory", self.data_dir.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_reloads_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.set("model", "bilstm").unwrap();
        cfg.set("lr", "0.0025").unwrap();
        cfg.set("clip_norm", "none").unwrap();
        cfg.set("synth_noise", "0.1").unwrap();
        let mut back = RunConfig::default();
        back.apply_kv(&cfg.to_kv(), Path::new("echo")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("hidden", "many").unwrap_err();
        assert!(err.to_string().contains("`hidden`"), "{err}");
        assert!(matches!(cfg.set("hiden", "3"), Err(CliError::UnknownKey(_))));
        cfg.set("batch", "0").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("`batch`"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_kv("# header\nhidden = 8\nepochs 3\n", Path::new("run.cfg")).unwrap_err();
        assert_eq!(err.to_string(), "run.cfg:3: expected `key = value`, got `epochs 3`");
    }

    #[test]
    fn warm_start_needs_lsta() {
        let cfg = RunConfig {
            model: ModelChoice::Lstm,
            warm_start_as_lstm: true,
            dataset: DatasetChoice::Synth,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
