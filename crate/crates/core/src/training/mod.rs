//! Data loading, splitting, the training loop, the logistic baseline,
//! hyperparameter search, cross-validation and checkpoints.

pub mod baseline;
pub mod checkpoint;
pub mod crossval;
pub mod data;
pub mod search;
pub mod split;
pub mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentConfig, AugmentError};
use crate::audio::AudioError;
use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::features::{FeatureError, MelParams, Normalization};
use crate::nn::{NnError, Optimizer};

pub use baseline::{train_baseline, BaselineClassifier, LogisticModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, Classifier};
pub use crossval::{cross_validate, CrossvalReport};
pub use data::{Corpus, Featurizer};
pub use search::{hyperparam_search, SearchReport, SearchSpace};
pub use split::{kfold_split, stratified_split};
pub use trainer::{train_model, EpochRecord, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("class {class} has {count} members, needs at least {needed}")]
    ClassTooSmall { class: usize, count: usize, needed: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("hyperparameter search has no candidates")]
    EmptyGrid,
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Training crop length; evaluation always sees whole clips.
    pub crop_s: f64,
    pub split_ratios: [f64; 3],
    pub mel: MelParams,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::adam(),
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            seed: 42,
            augment: Some(AugmentConfig::default()),
            crop_s: 4.0,
            split_ratios: [0.7, 0.15, 0.15],
            mel: MelParams::default(),
            normalization: Normalization::PerSpectrogram,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.crop_s > 0.0) {
            return bad(format!("crop_s {} must be positive", self.crop_s));
        }
        if self.split_ratios.iter().any(|&r| !(r > 0.0)) || (self.split_ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split ratios {:?} must be positive and sum to 1", self.split_ratios));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.mel.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let c = TrainConfig {
            split_ratios: [0.7, 0.2, 0.2],
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = TrainConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        let partial: TrainConfig = serde_json::from_str(r#"{"lr": 0.01, "augment": null}"#).unwrap();
        assert_eq!(partial.lr, 0.01);
        assert!(partial.augment.is_none());
        assert_eq!(partial.epochs, 10);
    }
}
