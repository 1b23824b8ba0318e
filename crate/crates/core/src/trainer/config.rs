use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imaging::SynthConfig;
use crate::losses::{LossWeights, SmoothnessSigma};
use crate::networks::NetConfig;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Standard,
    /// Adds the reflectance smoothness prior, weight 1 unless set explicitly.
    IiwSmoothness,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "iiw_smoothness" => Ok(Mode::IiwSmoothness),
            other => Err(Error::Config(format!(
                "unknown mode `{other}`, expected `standard` or `iiw_smoothness`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub mode: Mode,
    pub smoothness_sigma: SmoothnessSigma,
    /// Keep at most this many images of each collection.
    pub max_samples: Option<usize>,
    /// Filled from the `[weights]` section.
    #[serde(skip)]
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 1e-4,
            betas: [0.5, 0.999],
            seed: 0,
            checkpoint_every: 0,
            mode: Mode::Standard,
            smoothness_sigma: SmoothnessSigma::default(),
            max_samples: None,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.batch_size must be at least 2 to fit code moments, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config(format!(
                "train.betas must lie in [0, 1), got {:?}",
                self.betas
            )));
        }
        if self.max_samples == Some(0) {
            return Err(Error::Config("train.max_samples must be at least 1".into()));
        }
        self.smoothness_sigma.validate()?;
        self.weights.validate()
    }

    /// Loss weights after applying the mode.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights.clone();
        if self.mode == Mode::IiwSmoothness && w.smoothness == 0.0 {
            w.smoothness = 1.0;
        }
        w
    }
}

/// Contents of a run configuration file with `[data]`, `[net]`, `[train]`
/// and `[weights]` sections. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: SynthConfig,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub weights: LossWeights,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.weights = cfg.weights.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.weights.validate()
    }
}
