use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::changepoint_bma::{BmaParams, InfoLevel, MarginalMode};
use crate::simulators::{CpSupport, LdsConfig, RegressionConfig, TaskLink};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Lds,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "lds" => Ok(Task::Lds),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    NoInfo,
    SupportKnown,
    KnownInAdvance,
    KnownAfterward,
    OracleRidge,
    TransferRidge,
    Bma,
    LdsCpa,
    LdsOracle,
    ConstructionSweep,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::NoInfo,
        Variant::SupportKnown,
        Variant::KnownInAdvance,
        Variant::KnownAfterward,
        Variant::OracleRidge,
        Variant::TransferRidge,
        Variant::Bma,
        Variant::LdsCpa,
        Variant::LdsOracle,
        Variant::ConstructionSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoInfo => "NoInfo",
            Variant::SupportKnown => "SupportKnown",
            Variant::KnownInAdvance => "KnownInAdvance",
            Variant::KnownAfterward => "KnownAfterward",
            Variant::OracleRidge => "OracleRidge",
            Variant::TransferRidge => "TransferRidge",
            Variant::Bma => "Bma",
            Variant::LdsCpa => "LdsCpa",
            Variant::LdsOracle => "LdsOracle",
            Variant::ConstructionSweep => "ConstructionSweep",
        }
    }

    pub fn task(self) -> Option<Task> {
        match self {
            Variant::LdsCpa | Variant::LdsOracle => Some(Task::Lds),
            Variant::ConstructionSweep => None,
            _ => Some(Task::Regression),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Case-insensitive; `-` and `_` are ignored, so `known-in-advance`
    /// and `KnownInAdvance` are the same variant.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

pub fn parse_marginal_mode(s: &str) -> Result<MarginalMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "post" | "post-segment-only" => Ok(MarginalMode::PostSegmentOnly),
        "two" | "two-segment" => Ok(MarginalMode::TwoSegment),
        other => Err(Error::Config(format!("unknown marginal mode `{other}` (expected post or two)"))),
    }
}

/// Everything needed to run one Monte-Carlo sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub variants: Vec<Variant>,
    pub trials: usize,
    /// Change point of every test trajectory.
    pub test_cp: usize,
    /// Change-point support assumed by the averaging variants.
    pub support: CpSupport,
    pub dim: usize,
    pub len: usize,
    pub lambda: f64,
    /// Standard deviation σ of the observation noise.
    pub noise_std: f64,
    pub row_prior_var: f64,
    /// Link noise ε of the anticorrelated task pair; `None` draws the two
    /// regression tasks independently.
    pub epsilon: Option<f64>,
    pub spectral_cap: f64,
    pub seed: u64,
    pub marginal_mode: MarginalMode,
    /// Worker threads; `None` uses the available parallelism.
    pub threads: Option<usize>,
    pub sharpness: Vec<f64>,
    pub out: Option<PathBuf>,
    pub svg: bool,
    pub log_scale: bool,
}

impl ExperimentConfig {
    /// d = 3, N = 30, change at 12, support {10..20}, λ = 1, σ = 0.1.
    pub fn regression() -> Self {
        Self {
            task: Task::Regression,
            variants: vec![
                Variant::NoInfo,
                Variant::SupportKnown,
                Variant::KnownInAdvance,
                Variant::KnownAfterward,
                Variant::OracleRidge,
                Variant::Bma,
            ],
            trials: 5000,
            test_cp: 12,
            support: CpSupport::new(10, 20),
            dim: 3,
            len: 30,
            lambda: 1.0,
            noise_std: 0.1,
            row_prior_var: 1.0 / 3.0,
            epsilon: None,
            spectral_cap: 0.95,
            seed: 0,
            marginal_mode: MarginalMode::TwoSegment,
            threads: None,
            sharpness: vec![5.0, 10.0, 20.0, 40.0],
            out: None,
            svg: false,
            log_scale: false,
        }
    }

    /// d = 3, N = 40, change at 17, support {15..25}, τ² = 1/d, σ = 0.1.
    pub fn lds() -> Self {
        Self {
            task: Task::Lds,
            variants: vec![Variant::LdsOracle, Variant::LdsCpa],
            test_cp: 17,
            support: CpSupport::new(15, 25),
            len: 40,
            ..Self::regression()
        }
    }

    /// Construction sweep preset: d = 2, N = 20, support {5..15}, 50 prompts.
    pub fn sweep() -> Self {
        Self {
            variants: vec![Variant::SupportKnown],
            trials: 50,
            support: CpSupport::new(5, 15),
            dim: 2,
            len: 20,
            ..Self::regression()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Self::regression(),
            Task::Lds => Self::lds(),
        }
    }

    pub fn noise_var(&self) -> f64 {
        // a noiseless generator is modelled with a vanishing noise level
        (self.noise_std * self.noise_std).max(1e-12)
    }

    pub fn bma_params(&self) -> BmaParams {
        BmaParams {
            lambda: self.lambda,
            noise_var: self.noise_var(),
            marginal_mode: self.marginal_mode,
        }
    }

    pub fn info_level(&self, variant: Variant) -> Option<InfoLevel> {
        match variant {
            Variant::NoInfo => Some(InfoLevel::NoInfo),
            Variant::SupportKnown => Some(InfoLevel::SupportKnown {
                low: self.support.low,
                high: self.support.high,
            }),
            Variant::KnownInAdvance => Some(InfoLevel::KnownInAdvance(self.test_cp)),
            Variant::KnownAfterward => Some(InfoLevel::KnownAfterward(self.test_cp)),
            _ => None,
        }
    }

    /// Generator settings for the test trajectories.
    pub fn regression_config(&self) -> RegressionConfig {
        RegressionConfig {
            dim: self.dim,
            len: self.len,
            cp_support: CpSupport::singleton(self.test_cp),
            noise_std: self.noise_std,
            prior_precision: self.lambda,
            task_link: match self.epsilon {
                Some(epsilon) => TaskLink::Anticorrelated { epsilon },
                None => TaskLink::Independent,
            },
        }
    }

    pub fn lds_config(&self) -> LdsConfig {
        LdsConfig {
            dim: self.dim,
            len: self.len,
            cp_support: CpSupport::singleton(self.test_cp),
            noise_std: self.noise_std,
            row_prior_var: self.row_prior_var,
            spectral_cap: self.spectral_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.support.validate(self.len)?;
        if !self.support.contains(self.test_cp) {
            return Err(Error::Config(format!(
                "test change point {} lies outside the support [{}, {}]",
                self.test_cp, self.support.low, self.support.high
            )));
        }
        self.bma_params().validate()?;
        match self.task {
            Task::Regression => self.regression_config().validate()?,
            Task::Lds => self.lds_config().validate()?,
        }
        for v in &self.variants {
            if let Some(task) = v.task() {
                if task != self.task {
                    return Err(Error::Config(format!("variant {v} does not apply to the {:?} task", self.task)));
                }
            }
            if *v == Variant::TransferRidge && self.epsilon.is_none() {
                return Err(Error::Config("TransferRidge needs the link noise `epsilon`".into()));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.sharpness.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::Config("sharpness values must be positive".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. Keys: `task`,
    /// `variants` (comma separated), `trials`, `test_cp`, `d`, `N`,
    /// `support_low`, `support_high`, `lambda`, `sigma`, `tau2`, `epsilon`,
    /// `spectral_cap`, `seed`, `marginal_mode`, `threads`, `sharpness`
    /// (comma separated), `out`, `svg`, `log_scale`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
            }
        }
        match key {
            "task" => self.task = value.parse()?,
            "variants" => {
                self.variants = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()?
            }
            "trials" => self.trials = num(key, value)?,
            "test_cp" => self.test_cp = num(key, value)?,
            "d" => self.dim = num(key, value)?,
            "N" => self.len = num(key, value)?,
            "support_low" => self.support.low = num(key, value)?,
            "support_high" => self.support.high = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "sigma" => self.noise_std = num(key, value)?,
            "tau2" => self.row_prior_var = num(key, value)?,
            "epsilon" => self.epsilon = Some(num(key, value)?),
            "spectral_cap" => self.spectral_cap = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "marginal_mode" => self.marginal_mode = parse_marginal_mode(value)?,
            "threads" => self.threads = Some(num(key, value)?),
            "sharpness" => {
                self.sharpness = value
                    .split(',')
                    .map(|s| num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "svg" => self.svg = flag(key, value)?,
            "log_scale" => self.log_scale = flag(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults for the file's `task` key, overridden by the remaining keys.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let task = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == "task")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(Task::Regression);
        let mut cfg = Self::for_task(task);
        cfg.apply_text(&text)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("known-in-advance".parse::<Variant>().unwrap(), Variant::KnownInAdvance);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn config_text_overrides_defaults() {
        let mut cfg = ExperimentConfig::regression();
        cfg.apply_text(
            "# comment\ntrials = 10\nvariants = NoInfo, OracleRidge # trailing\nsigma=0.5\nmarginal_mode = post\n",
        )
        .unwrap();
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.variants, vec![Variant::NoInfo, Variant::OracleRidge]);
        assert_eq!(cfg.noise_std, 0.5);
        assert_eq!(cfg.marginal_mode, MarginalMode::PostSegmentOnly);
        assert!(cfg.apply_text("nonsense").is_err());
        assert!(cfg.apply_text("colour = red").is_err());
    }

    #[test]
    fn validation_rejects_inconsistent_settings() {
        let mut cfg = ExperimentConfig::regression();
        cfg.validate().unwrap();
        cfg.test_cp = 25;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::regression();
        cfg.variants.push(Variant::LdsCpa);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::regression();
        cfg.variants = vec![Variant::TransferRidge];
        assert!(cfg.validate().is_err());
        cfg.epsilon = Some(0.1);
        cfg.validate().unwrap();
        ExperimentConfig::lds().validate().unwrap();
    }
}
