//! Run configuration, read from TOML. Every key is optional.
//!
//! ```toml
//! seed = 0
//! [model]
//! stages = 3
//! depth = 4
//! width = 64
//! skip = "dlau"          # or "residual"
//! attention = true
//! batchnorm = true
//! [loss]
//! kind = "mse"           # "huber", "wing"
//! [train]
//! lr = 2.5e-4
//! batch_size = 8
//! epochs = 50
//! [data]
//! size = 256
//! sigma = 5.0
//! rotations = [5, -5, 10, -10]
//! [eval]
//! threshold = 0.05
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Side of the square network input.
    pub size: usize,
    /// Ground-truth heatmap spread in heatmap cells.
    pub sigma: f64,
    pub hflip: bool,
    pub rotations: Vec<i32>,
    pub blur: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            size: 256,
            sigma: 5.0,
            hflip: a.hflip,
            rotations: a.rotations,
            blur: a.blur,
        }
    }
}

impl DataConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            hflip: self.hflip,
            rotations: self.rotations.clone(),
            blur: self.blur,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        let unit = self.model.input_unit();
        if self.data.size == 0 || !self.data.size.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "data.size {} must be a positive multiple of {unit} for depth {}",
                self.data.size, self.model.depth
            )));
        }
        if !(self.data.sigma > 0.0) {
            return Err(Error::Config(format!("data.sigma must be positive, got {}", self.data.sigma)));
        }
        if !(self.eval.threshold > 0.0) {
            return Err(Error::Config(format!("eval.threshold must be positive, got {}", self.eval.threshold)));
        }
        Ok(())
    }
}
