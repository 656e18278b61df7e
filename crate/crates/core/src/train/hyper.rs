use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::TextPool;
use crate::model::{AblationFlags, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Random flip / rotation / zoom of training images.
    pub augment: bool,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Dataset presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Mmhs150k,
    Multioff,
    Hmc,
    /// Synthetic confounder set from [`crate::data::toy`].
    Toy,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::Mmhs150k,
        Profile::Multioff,
        Profile::Hmc,
        Profile::Toy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Mmhs150k => "mmhs150k",
            Profile::Multioff => "multioff",
            Profile::Hmc => "hmc",
            Profile::Toy => "toy",
        }
    }

    pub fn hyperparams(self, seed: u64) -> Hyperparams {
        let (epochs, batch_size, learning_rate, augment) = match self {
            Profile::Mmhs150k => (10, 32, 1e-4, true),
            Profile::Multioff => (40, 8, 1e-3, true),
            Profile::Hmc => (25, 16, 1e-4, true),
            Profile::Toy => (30, 16, 1e-3, false),
        };
        Hyperparams {
            epochs,
            batch_size,
            learning_rate,
            optimizer: Optimizer::Adam,
            seed,
            augment,
        }
    }

    /// Architecture used with this profile. `vocab_size` is filled in once
    /// the vocabulary is built.
    pub fn model_config(self) -> ModelConfig {
        match self {
            Profile::Toy => ModelConfig {
                image_size: 64,
                embed_dim: 32,
                num_heads: 2,
                layers: 2,
                max_len: 8,
                text_pool: TextPool::Cls,
                ablation: AblationFlags::default(),
                ..ModelConfig::default()
            },
            _ => ModelConfig::default(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown profile {s:?}")))
    }
}
