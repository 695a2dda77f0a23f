//! Run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserConfig;
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::tasks::TaskConfig;

/// Which attention mask the denoiser uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskKind {
    /// Compiled from the graphical model and symmetrized.
    #[default]
    Structured,
    /// Compiled without symmetrization.
    Unsymmetrized,
    /// Every node attends to every node.
    Dense,
    /// Each node attends to itself and `per_row` random others.
    Random { per_row: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch_size: 16,
            clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

/// Stop once a validation metric crosses a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub metric: String,
    pub threshold: f64,
    pub direction: Direction,
}

impl StopRule {
    pub fn met(&self, value: f64) -> bool {
        match self.direction {
            Direction::AtMost => value <= self.threshold,
            Direction::AtLeast => value >= self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    /// Validate every `cadence` iterations; 0 disables validation.
    pub cadence: usize,
    pub instances: usize,
    /// Observe exactly this many random nodes instead of the task's default partition.
    pub observe: Option<usize>,
    pub stop: Option<StopRule>,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            cadence: 500,
            instances: 16,
            observe: None,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub mask: MaskKind,
    #[serde(default)]
    pub model: DenoiserConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub validation: ValidationConfig,
    /// Checkpoint every this many iterations; 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_iterations() -> usize {
    1000
}

impl RunConfig {
    pub fn new(task: TaskConfig) -> Self {
        Self {
            task,
            mask: MaskKind::default(),
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            optim: OptimConfig::default(),
            iterations: default_iterations(),
            validation: ValidationConfig::default(),
            checkpoint_every: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        if self.optim.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.optim.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if self.schedule.steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let MaskKind::Random { per_row: 0 } = self.mask {
            return Err(Error::Config("random mask needs per_row >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
