//! Run configuration: a JSON document whose every default is visible through
//! `aacrc config dump-defaults`. Command-line flags override the document,
//! which overrides the defaults.

use std::path::{Path, PathBuf};

use aacrc_core::sim::TaskKind;
use aacrc_core::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Task, function class, level, regularizer, solver, split plan and seed.
    pub experiment: ExperimentConfig,
    pub paths: Paths,
    /// Worker cap for batch calibration; `None` uses every core.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Default location for simulated datasets.
    pub data_dir: PathBuf,
    /// Default location for reports.
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_task(TaskKind::Regression)
    }
}

impl RunConfig {
    pub fn for_task(task: TaskKind) -> Self {
        let experiment = match task {
            TaskKind::Regression => ExperimentConfig::regression_default(),
            TaskKind::Segmentation => ExperimentConfig::segmentation_default(),
        };
        Self {
            experiment,
            paths: Paths::default(),
            threads: None,
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` when given, otherwise the defaults for `task`.
    pub fn resolve(path: Option<&Path>, task: Option<TaskKind>) -> CliResult<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::for_task(task.unwrap_or(TaskKind::Regression)),
        };
        if let Some(t) = task {
            if path.is_some() && config.experiment.task != t {
                return Err(CliError::Config(format!(
                    "--task {} conflicts with the config task {}",
                    task_name(t),
                    task_name(config.experiment.task)
                )));
            }
            config.experiment.task = t;
        }
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.experiment.validate()?;
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.experiment.split.seed
    }
}

pub fn task_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Regression => "regression",
        TaskKind::Segmentation => "segmentation",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        for task in [TaskKind::Regression, TaskKind::Segmentation] {
            let config = RunConfig::for_task(task);
            let text = serde_json::to_string_pretty(&config).unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, config);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value = serde_json::to_value(RunConfig::default()).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(value).is_err());
        let mut value = serde_json::to_value(RunConfig::default()).unwrap();
        value["experiment"]["split"]["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<RunConfig>(value).is_err());
    }

    #[test]
    fn missing_sections_take_defaults() {
        let config: RunConfig = serde_json::from_str(r#"{"threads": 2}"#).unwrap();
        assert_eq!(config.threads, Some(2));
        assert_eq!(config.experiment, ExperimentConfig::regression_default());
    }
}
