//! The run configuration file. Every field is required, so a parsed file
//! re-serializes to the same bytes and nothing is silently defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::oracle::GbdtParams;
use crate::pipeline::ExperimentConfig;
use crate::seqmodel::{ModelConfig, TrainHyper};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainConfig {
    pub epochs: usize,
    /// Continue from the trained checkpoint instead of a fresh initialisation.
    pub warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub train: TrainHyper,
    pub retrain: RetrainConfig,
    pub oracle: GbdtParams,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            experiment: ExperimentConfig::default(),
            model: ModelConfig::default(),
            train: TrainHyper::default(),
            retrain: RetrainConfig {
                epochs: 100,
                warm_start: true,
            },
            oracle: GbdtParams::default(),
            paths: Paths {
                dataset: PathBuf::from("data/dataset.jsonl"),
                out_dir: PathBuf::from("runs/default"),
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.oracle.validate()?;
        if self.retrain.epochs == 0 {
            return Err(Error::invalid("retrain.epochs must be at least 1"));
        }
        Ok(())
    }

    /// Training settings for a fresh model.
    pub fn train_hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper { seed, ..self.train }
    }

    /// Training settings for the one-shot retraining round.
    pub fn retrain_hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            seed,
            epochs: self.retrain.epochs,
            ..self.train
        }
    }
}
