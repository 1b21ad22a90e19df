//! Run configuration: flat `key = value` files with CLI-flag overrides.

use std::path::Path;

use crate::child_agent::DqnHyperparams;
use crate::crop_env::YearProfile;
use crate::error::{Error, Result};
use crate::policy::{EpsilonSchedule, MixtureParams};
use crate::rewards::{Budget, RewardWeights};

/// Everything one training run needs. Serialized verbatim into
/// `run_meta.json`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub year_profile: YearProfile,
    pub seed: u64,
    pub weather_seed: u64,
    pub episodes: usize,
    pub eta: f64,
    pub alpha_mix: f64,
    /// Child neighborhood half-width per axis (mm, kg/ha).
    pub delta: f64,
    pub parent_step: f64,
    pub parent_range: f64,
    pub lr_parent: f64,
    pub gamma: f64,
    pub lr_child: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync: usize,
    pub i_total: f64,
    pub n_total: f64,
    pub w_i: f64,
    pub w_n: f64,
    pub eps_parent_start: f64,
    pub eps_parent_end: f64,
    pub eps_child_start: f64,
    pub eps_child_end: f64,
    /// Fraction of episodes over which epsilon decays linearly.
    pub eps_decay_frac: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            year_profile: YearProfile::Dry2023,
            seed: 1,
            weather_seed: 42,
            episodes: 2000,
            eta: 0.8,
            alpha_mix: 0.6,
            delta: 20.0,
            parent_step: 20.0,
            parent_range: 60.0,
            lr_parent: 0.1,
            gamma: 0.95,
            lr_child: 1e-3,
            batch_size: 32,
            buffer_capacity: 10_000,
            target_sync: 100,
            i_total: 537.0,
            n_total: 250.0,
            w_i: 100.0,
            w_n: 100.0,
            eps_parent_start: 1.0,
            eps_parent_end: 0.4,
            eps_child_start: 0.5,
            eps_child_end: 0.0,
            eps_decay_frac: 1.0,
        }
    }
}

impl RunConfig {
    pub fn budget(&self) -> Budget {
        Budget {
            i_total: self.i_total,
            n_total: self.n_total,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            w_i: self.w_i,
            w_n: self.w_n,
        }
    }

    pub fn dqn_hyperparams(&self) -> DqnHyperparams {
        DqnHyperparams {
            lr: self.lr_child,
            gamma: self.gamma,
            batch_size: self.batch_size,
            target_sync_interval: self.target_sync,
        }
    }

    pub fn mixture_params(&self) -> MixtureParams {
        let decay = (self.episodes as f64 * self.eps_decay_frac).round() as usize;
        MixtureParams {
            eta: self.eta,
            alpha_mix: self.alpha_mix,
            sigma: (self.delta / 2.0, self.delta / 2.0),
            epsilon_parent: EpsilonSchedule {
                start: self.eps_parent_start,
                end: self.eps_parent_end,
                decay_episodes: decay,
            },
            epsilon_child: EpsilonSchedule {
                start: self.eps_child_start,
                end: self.eps_child_end,
                decay_episodes: decay,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget().validate()?;
        self.dqn_hyperparams().validate()?;
        self.mixture_params().validate()?;
        if self.delta <= 0.0 {
            return Err(Error::Config(format!("delta {} must be > 0", self.delta)));
        }
        if !(self.lr_parent > 0.0 && self.lr_parent <= 1.0) {
            return Err(Error::Config(format!(
                "lr_parent {} outside (0,1]",
                self.lr_parent
            )));
        }
        if !(0.0..=1.0).contains(&self.eps_decay_frac) {
            return Err(Error::Config(format!(
                "eps_decay_frac {} outside [0,1]",
                self.eps_decay_frac
            )));
        }
        if self.w_i < 0.0 || self.w_n < 0.0 {
            return Err(Error::Config("reward weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Parse a flat key-value config file over the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_key_values(&text, path)
    }

    pub fn from_key_values(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, lineno, "expected key = value"))?;
            let key = key.trim();
            let value = value.trim();
            let f = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad number {value:?}")))
            };
            let u = || -> Result<u64> {
                value
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad integer {value:?}")))
            };
            match key {
                "year_profile" => cfg.year_profile = YearProfile::parse(value)?,
                "seed" => cfg.seed = u()?,
                "weather_seed" => cfg.weather_seed = u()?,
                "episodes" => cfg.episodes = u()? as usize,
                "eta" => cfg.eta = f()?,
                "alpha_mix" => cfg.alpha_mix = f()?,
                "delta" => cfg.delta = f()?,
                "parent_step" => cfg.parent_step = f()?,
                "parent_range" => cfg.parent_range = f()?,
                "lr_parent" => cfg.lr_parent = f()?,
                "gamma" => cfg.gamma = f()?,
                "lr_child" => cfg.lr_child = f()?,
                "batch_size" => cfg.batch_size = u()? as usize,
                "buffer_capacity" => cfg.buffer_capacity = u()? as usize,
                "target_sync" => cfg.target_sync = u()? as usize,
                "i_total" => cfg.i_total = f()?,
                "n_total" => cfg.n_total = f()?,
                "w_i" => cfg.w_i = f()?,
                "w_n" => cfg.w_n = f()?,
                "eps_parent_start" => cfg.eps_parent_start = f()?,
                "eps_parent_end" => cfg.eps_parent_end = f()?,
                "eps_child_start" => cfg.eps_child_start = f()?,
                "eps_child_end" => cfg.eps_child_end = f()?,
                "eps_decay_frac" => cfg.eps_decay_frac = f()?,
                other => {
                    return Err(Error::parse(path, lineno, format!("unknown key {other:?}")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
