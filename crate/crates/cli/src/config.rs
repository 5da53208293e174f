//! The run configuration file: a JSON document mirroring the per-module
//! configs, with command-line flags taking precedence over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prefkit::dpo::DpoConfig;
use prefkit::ppo::PpoConfig;
use prefkit::prefmodel::PmTrainConfig;
use prefkit::textscan::RepeatConfig;
use prefkit::tinylm::{LmConfig, LmTrainConfig, SampleOptions};

use crate::CliError;

/// Curation knobs that have no module config of their own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub samples_per_request: usize,
    pub percentile: f64,
    pub max_ratio: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            samples_per_request: 4,
            percentile: 0.95,
            max_ratio: 2.0,
        }
    }
}

/// Everything a run can configure, as one JSON document. Any field may be
/// omitted; omitted fields fall back to the built-in defaults, and explicit
/// command-line flags override file values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lm: Option<LmConfig>,
    pub lm_train: Option<LmTrainConfig>,
    pub sample: Option<SampleOptions>,
    pub pm_train: Option<PmTrainConfig>,
    pub dpo: Option<DpoConfig>,
    pub ppo: Option<PpoConfig>,
    pub scan: Option<RepeatConfig>,
    pub curation: Option<CurationConfig>,
}

impl RunConfig {
    /// Reads a config file; a parse failure is a usage error naming the field.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config `{}`: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config `{}`: {e}", path.display())))
    }

    pub fn load_opt(path: Option<&PathBuf>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn lm(&self) -> LmConfig {
        self.lm.unwrap_or_default()
    }

    pub fn lm_train(&self) -> LmTrainConfig {
        self.lm_train.unwrap_or_default()
    }

    pub fn sample(&self) -> SampleOptions {
        self.sample.unwrap_or_default()
    }

    pub fn pm_train(&self) -> PmTrainConfig {
        self.pm_train.unwrap_or_default()
    }

    pub fn dpo(&self) -> DpoConfig {
        self.dpo.unwrap_or_default()
    }

    pub fn ppo(&self) -> PpoConfig {
        self.ppo.unwrap_or_default()
    }

    pub fn scan(&self) -> RepeatConfig {
        self.scan.unwrap_or_default()
    }

    pub fn curation(&self) -> CurationConfig {
        self.curation.unwrap_or_default()
    }
}

/// `flag.or(file_value).unwrap_or(default)` for copy types.
pub fn resolve<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
