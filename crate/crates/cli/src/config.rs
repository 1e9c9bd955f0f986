//! Run configuration: a TOML file plus command-line overrides, where an
//! explicit flag always beats the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use conforge_core::denoiser::DenoiserConfig;
use conforge_core::diffcore::AdamConfig;
use conforge_core::error::{Error, Result};
use conforge_core::objective::{ObjectiveKind, Weighting};
use conforge_core::schedule::{make_sigmoid_schedule, SchedulePreset, VarianceSchedule};
use conforge_core::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// "desk", "paper-default" or "paper-ablation".
    pub schedule: String,
    /// Optional overrides of the preset's sigmoid schedule.
    pub t_max: Option<usize>,
    pub beta_1: Option<f64>,
    pub beta_t_max: Option<f64>,
    pub objective: ObjectiveKind,
    pub weighting: Weighting,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub model: DenoiserConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: "desk".to_string(),
            t_max: None,
            beta_1: None,
            beta_t_max: None,
            objective: ObjectiveKind::Chainrule,
            weighting: Weighting::Unit,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 16,
            steps: 1000,
            checkpoint_every: 200,
            seed: 0,
            model: DenoiserConfig::desk(32, 2, 3, 10.0),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::invalid(format!("config {path:?}: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    /// Preset schedule with any explicit overrides applied.
    pub fn build_schedule(&self) -> Result<VarianceSchedule> {
        let preset = SchedulePreset::from_name(&self.schedule)?;
        let (t_max, beta_1, beta_t_max) = preset.params();
        make_sigmoid_schedule(
            self.t_max.unwrap_or(t_max),
            self.beta_1.unwrap_or(beta_1),
            self.beta_t_max.unwrap_or(beta_t_max),
        )
    }

    /// True when the run is far above desk scale (paper presets, long
    /// chains): worth an explicit warning before hours of compute.
    pub fn is_paper_scale(&self) -> bool {
        let preset_scale = self.schedule.starts_with("paper");
        let t = self.t_max.unwrap_or_else(|| {
            SchedulePreset::from_name(&self.schedule)
                .map(|p| p.params().0)
                .unwrap_or(0)
        });
        preset_scale || t > 1000
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            objective: self.objective,
            weighting: self.weighting,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: 1e-8,
            },
            batch_size: self.batch_size,
            steps: self.steps,
            seed: self.seed,
        }
    }
}
