//! Run configuration: one TOML file holding every module's settings.
//!
//! Missing fields take their defaults, unknown fields are rejected. Each
//! `train` run writes the resolved configuration next to its outputs so the
//! run can be repeated from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tscn_core::basemodel::ModelConfig;
use tscn_core::consensus::{RefinementConfig, TrainingSetup};
use tscn_core::evaluation::default_thresholds;
use tscn_core::localization::LocalizationConfig;
use tscn_core::losses::LossConfig;
use tscn_core::synthdata::GeneratorConfig;

use crate::dataset::Subset;
use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub thresholds: Vec<f64>,
    /// Split used by `localize`, `eval` and `plot`.
    pub split: Subset,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            split: Subset::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory.
    pub dataset: PathBuf,
    /// Run directory for checkpoints, logs, proposals, reports and plots.
    pub output: PathBuf,
    /// Training seed (initialization and video order).
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub refinement: RefinementConfig,
    pub localization: LocalizationConfig,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("run"),
            seed: 0,
            generator: GeneratorConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            refinement: RefinementConfig::default(),
            localization: LocalizationConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
    }

    /// Reads `path` when given, otherwise starts from defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| AppError::Usage(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.training_setup().validate()?;
        self.localization.validate()?;
        if self.localization.beta != self.refinement.beta {
            return Err(AppError::Usage(format!(
                "localization.beta ({}) must equal refinement.beta ({}); both weight the same fusion",
                self.localization.beta, self.refinement.beta
            )));
        }
        if self.evaluation.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(AppError::Usage("evaluation.thresholds must lie in (0, 1]".into()));
        }
        if i64::try_from(self.seed).is_err() || i64::try_from(self.generator.seed).is_err() {
            return Err(AppError::Usage("seeds must fit in a signed 64-bit integer".into()));
        }
        Ok(())
    }

    pub fn training_setup(&self) -> TrainingSetup {
        TrainingSetup {
            model: self.model,
            loss: self.loss,
            refinement: self.refinement.clone(),
            seed: self.seed,
        }
    }
}
