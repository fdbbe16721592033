//! Experiment configuration: a TOML file with one table per stage. Every
//! key is optional; flags override file values.
//!
//! ```toml
//! [data]        # dataset generation
//! scenes = 2000
//! questions_per_scene = 10
//! [model]       # architecture
//! [optim]       # Adam
//! [train]       # lambda_attn, batch_size, max_epochs, patience, seed, threads
//! [paths]       # train, val
//! [interp]      # threshold, scope
//! [finetune]    # epochs, val_a, val_b, probe
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbd_core::autodiff::optim::AdamConfig;
use tbd_core::interp::{Scope, DEFAULT_THRESHOLD};
use tbd_core::scene::DatasetConfig;
use tbd_core::trainer::{DataPaths, TrainConfig, TrainParams};
use tbd_core::zoo::ModelConfig;
use tbd_core::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpSection {
    pub threshold: f64,
    pub scope: Scope,
}

impl Default for InterpSection {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            scope: Scope::Attention,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub val_a: Option<PathBuf>,
    pub val_b: Option<PathBuf>,
    pub probe: Option<PathBuf>,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            val_a: None,
            val_b: None,
            probe: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DatasetConfig,
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub train: TrainParams,
    pub paths: DataPaths,
    pub interp: InterpSection,
    pub finetune: FinetuneSection,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn set_resolution(&mut self, r: usize) {
        self.data.resolution = r;
        self.model.resolution = r;
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            optim: self.optim,
            train: self.train.clone(),
            data: self.paths.clone(),
        }
    }

    /// Checks every section, whichever stage runs.
    pub fn validate(&self) -> Result<Vec<String>, Error> {
        self.data.validate()?;
        if !(self.interp.threshold > 0.0 && self.interp.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.interp.threshold)));
        }
        self.train_config().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
