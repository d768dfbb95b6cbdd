//! Experiment configuration documents.
//!
//! A run config is a single JSON or TOML file with sections `generator`,
//! `policy`, `loss`, `train`, and `paths`. Every section is optional and
//! falls back to defaults; unknown keys are rejected. Command-line flags
//! override config values.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::corpus::GeneratorConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::trainer::TrainConfig;

/// Policy construction settings: shape plus the random-init scale used when
/// no checkpoint is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub vocab_size: Option<usize>,
    pub bos_id: u32,
    /// Standard deviation of the random logit initialization; 0 gives the
    /// uniform policy.
    pub init_sd: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            vocab_size: None,
            bos_id: 0,
            init_sd: 1.0,
        }
    }
}

/// Default file locations, overridable by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub data: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub policy: PolicySection,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Parses a config file by extension: `.json` as JSON, anything else as
    /// TOML. Unknown keys anywhere in the document are rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
        }
    }
}
