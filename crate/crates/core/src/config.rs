//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs"
//!
//! [dataset]
//! manifest_path = "data/manifest.csv"   # or a [dataset.synth] table
//!
//! [train]
//! train_artefact = 1
//! epochs = 10
//!
//! [eval]
//! threshold_mode = "fixed"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::nn::ViTConfig;
use crate::protocol::{EvalConfig, Experiment, ProtocolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Seed of the synthetic generator; the global seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_name: Option<String>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ViTConfig,
    #[serde(default)]
    pub train: ProtocolConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl GlobalConfig {
    /// A synthetic-data configuration with every other section at its default.
    pub fn synthetic(synth: SynthConfig, seed: u64) -> Self {
        Self {
            seed,
            output_dir: default_output(),
            run_name: None,
            dataset: DatasetConfig { manifest_path: None, synth: Some(synth), seed: None },
            model: ViTConfig::default(),
            train: ProtocolConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: GlobalConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.manifest_path, &self.dataset.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("dataset: give manifest_path or synth, not both".into())),
            (None, None) => return Err(Error::Config("dataset: manifest_path or synth is required".into())),
            (Some(_), None) => {
                let p = self.manifest_path().expect("present");
                if !p.is_file() {
                    return Err(Error::Config(format!("manifest {} does not exist", p.display())));
                }
            }
            (None, Some(s)) => s.validate().map_err(|e| Error::Config(e.to_string()))?,
        }
        self.experiment().validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.dataset.manifest_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.seed)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            seed: self.seed,
            model: self.model.clone(),
            train: self.train.clone(),
            loss: self.loss,
            eval: self.eval.clone(),
        }
    }

    pub fn run_name(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| format!("a{}_s{}", self.train.train_artefact, self.seed))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir).join(self.run_name())
    }
}
