use std::path::{Path, PathBuf};

use coperc_core::{CollabStrategy, DepthProjection, FusionStrategy, PipelineConfig, ScenarioConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: cannot read config: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {field}: {reason}")]
    Invalid {
        path: PathBuf,
        field: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    CameraMissing,
    LidarMissing,
    NoiseSweep,
    Robust,
    FusionAblation,
    DepthAblation,
    CollabAblation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: Mode,
    pub trials: usize,
    /// Agents whose sensor is dropped in the missing-sensor modes.
    pub missing_agents: Vec<usize>,
    /// Pose noise levels (meters) for the sweep and robust modes.
    pub noise_sigmas: Vec<f64>,
    pub fusion: Vec<FusionStrategy>,
    pub depth: Vec<DepthProjection>,
    pub collab: Vec<CollabStrategy>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub render: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            trials: 1,
            missing_agents: vec![0],
            noise_sigmas: vec![0.0, 0.2, 0.4, 0.6],
            fusion: vec![FusionStrategy::LidarOnly, FusionStrategy::Equal, FusionStrategy::Biased],
            depth: vec![DepthProjection::NoProj, DepthProjection::EgoProj, DepthProjection::AllProj],
            collab: vec![CollabStrategy::Max, CollabStrategy::Concat, CollabStrategy::Attention],
            output_dir: None,
            workers: None,
            render: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentSpec {
    pub fn validate(&self) -> coperc_core::Result<()> {
        use coperc_core::Error;
        self.scenario.validate()?;
        self.pipeline.validate()?;
        let ex = &self.experiment;
        if ex.trials < 1 {
            return Err(Error::config("experiment.trials", "must be at least 1"));
        }
        if let Some(&a) = ex.missing_agents.iter().find(|&&a| a >= self.scenario.n_agents) {
            return Err(Error::config("experiment.missing_agents", format!("agent {a} does not exist")));
        }
        if ex.noise_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("experiment.noise_sigmas", "must be non-negative"));
        }
        if ex.workers == Some(0) {
            return Err(Error::config("experiment.workers", "must be positive"));
        }
        let empty_axis = match ex.mode {
            Mode::NoiseSweep | Mode::Robust => ex.noise_sigmas.is_empty().then_some("noise_sigmas"),
            Mode::FusionAblation => ex.fusion.is_empty().then_some("fusion"),
            Mode::DepthAblation => ex.depth.is_empty().then_some("depth"),
            Mode::CollabAblation => ex.collab.is_empty().then_some("collab"),
            _ => None,
        };
        if let Some(axis) = empty_axis {
            return Err(Error::config(format!("experiment.{axis}"), "needs at least one value for this mode"));
        }
        Ok(())
    }
}

pub fn parse_spec(text: &str, path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let invalid = |field: String, reason: String| ConfigError::Invalid {
        path: path.to_path_buf(),
        field,
        reason,
    };
    let de = toml::de::Deserializer::parse(text).map_err(|e| invalid("<document>".into(), e.message().to_string()))?;
    let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        invalid(if field == "." { "<document>".into() } else { field }, e.inner().message().to_string())
    })?;
    spec.validate().map_err(|e| match e {
        coperc_core::Error::InvalidConfig { field, reason } => invalid(field, reason),
        other => invalid("<document>".into(), other.to_string()),
    })?;
    Ok(spec)
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_spec(&text, path)
}
