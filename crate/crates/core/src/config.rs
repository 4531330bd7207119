//! TOML run configuration. Every section is optional.
//!
//! API keys never live here; HTTP backends read `LLM_API_KEY`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{LlmSettings, DEFAULT_BUDGET};
use crate::llm::HttpConfig;
use crate::optics::Geometry;
use crate::optimizers::BaselineConfig;
use crate::task::{fixture, NoiseConfig, TrialGenerator};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("backend `{0}` is defined twice")]
    DuplicateBackend(String),
    #[error("no backend named `{0}`")]
    UnknownBackend(String),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub budget: usize,
    pub runs_per_trial: usize,
    /// 1 runs everything on the calling thread.
    pub workers: usize,
    /// Generator seeds used when no trial fixture is given.
    pub trial_seeds: Vec<u64>,
    pub trials_fixture: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            runs_per_trial: 3,
            workers: 1,
            trial_seeds: fixture::CANONICAL_SEEDS.to_vec(),
            trials_fixture: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geometry: Geometry,
    pub generator: TrialGenerator,
    pub noise: NoiseConfig,
    pub baselines: BaselineConfig,
    pub harness: HarnessConfig,
    pub llm: LlmSettings,
    pub backends: Vec<HttpConfig>,
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.harness.budget == 0 {
            return Err(ConfigError::NotPositive("harness.budget"));
        }
        if self.harness.runs_per_trial == 0 {
            return Err(ConfigError::NotPositive("harness.runs_per_trial"));
        }
        for (i, b) in self.backends.iter().enumerate() {
            if self.backends[..i].iter().any(|o| o.name == b.name) {
                return Err(ConfigError::DuplicateBackend(b.name.clone()));
            }
        }
        Ok(())
    }

    pub fn backend(&self, name: &str) -> Result<&HttpConfig, ConfigError> {
        self.backends
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| ConfigError::UnknownBackend(name.to_string()))
    }
}
