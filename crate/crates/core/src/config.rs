//! Run configuration, loadable from TOML and overridable from the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eligibility::FilterConfig;
use crate::error::{Error, Result};
use crate::interaction::TtcConfig;
use crate::io::ValidationMode;
use crate::kinematics::ComfortThresholds;
use crate::sampler::{SamplingConfig, SamplingMode};
use crate::stats::DEFAULT_BINS;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Replays selections from this plan file instead of sampling.
    pub replay_plan: Option<PathBuf>,
    pub validation: ValidationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub filter: FilterConfig,
    pub sampling: SamplingConfig,
    pub comfort: ComfortThresholds,
    pub ttc: TtcConfig,
    pub io: IoConfig,
    /// Append the original ego to each augmented scene as a plain vehicle.
    pub keep_original_ego: bool,
    pub histogram_bins: usize,
    /// Worker threads; 0 uses every available core.
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            filter: FilterConfig::default(),
            sampling: SamplingConfig::default(),
            comfort: ComfortThresholds::default(),
            ttc: TtcConfig::default(),
            io: IoConfig::default(),
            keep_original_ego: true,
            histogram_bins: DEFAULT_BINS,
            parallelism: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.sampling.validate()?;
        self.comfort.validate()?;
        self.ttc.validate()?;
        if self.histogram_bins < 2 {
            return Err(Error::TooFewBins(self.histogram_bins));
        }
        if self.sampling.mode == SamplingMode::PerEgo && self.sampling.n_s != 1 {
            log::warn!("n_s = {} is ignored in per-ego mode", self.sampling.n_s);
        }
        Ok(())
    }

    /// Settings that determine the output bytes. Paths and thread count are
    /// left out so identical runs produce identical summaries.
    pub fn algorithmic_echo(&self) -> serde_json::Value {
        serde_json::json!({
            "filter": self.filter,
            "sampling": self.sampling,
            "comfort": self.comfort,
            "ttc": self.ttc,
            "keep_original_ego": self.keep_original_ego,
            "histogram_bins": self.histogram_bins,
            "validation": self.io.validation,
        })
    }
}
