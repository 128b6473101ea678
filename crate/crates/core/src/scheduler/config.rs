use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Parallel,
    Sequential,
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "sequential" => Ok(Mode::Sequential),
            other => Err(ConfigError::Invalid(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid scheduler configuration: {0}")]
    Invalid(String),
    #[error("cannot parse scheduler configuration: {0}")]
    Parse(String),
}

/// Worker pool and scheduling parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub min_workers: usize,
    pub max_workers: usize,
    /// Shrink by one when the ready depth falls below this.
    pub watermark_low: usize,
    /// Grow by one when the ready depth exceeds this.
    pub watermark_high: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Task completions between pool-size decisions.
    pub resize_quantum: usize,
    /// Where to write a core dump when a kernel fails.
    #[serde(skip)]
    pub dump_on_error: Option<PathBuf>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            min_workers: 1,
            max_workers: 4,
            watermark_low: 1,
            watermark_high: 8,
            seed: 0,
            mode: Mode::Parallel,
            resize_quantum: 64,
            dump_on_error: None,
        }
    }
}

impl SchedulerConfig {
    /// A fixed-size pool of `n` workers.
    pub fn fixed(n: usize, seed: u64) -> Self {
        SchedulerConfig {
            min_workers: n,
            max_workers: n,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_workers < 1 || self.min_workers > self.max_workers {
            return Err(ConfigError::Invalid(format!(
                "need 1 <= min_workers ({}) <= max_workers ({})",
                self.min_workers, self.max_workers
            )));
        }
        if self.watermark_low >= self.watermark_high {
            return Err(ConfigError::Invalid(format!(
                "need watermark_low ({}) < watermark_high ({})",
                self.watermark_low, self.watermark_high
            )));
        }
        if self.resize_quantum == 0 {
            return Err(ConfigError::Invalid("resize_quantum must be positive".into()));
        }
        Ok(())
    }

    /// Parses `key = value` text with the keys `min_workers`, `max_workers`,
    /// `seed`, `mode`, `watermark_low`, `watermark_high` (and
    /// `resize_quantum`). Missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let cfg: SchedulerConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Next pool size given the current size and ready-queue depth: grow by one
/// above the high watermark, shrink by one below the low watermark, always
/// within `[min_workers, max_workers]`.
pub fn resize_pool(current: usize, ready_depth: usize, cfg: &SchedulerConfig) -> usize {
    let current = current.clamp(cfg.min_workers, cfg.max_workers);
    if ready_depth > cfg.watermark_high && current < cfg.max_workers {
        current + 1
    } else if ready_depth < cfg.watermark_low && current > cfg.min_workers {
        current - 1
    } else {
        current
    }
}
