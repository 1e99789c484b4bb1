//! Multilabel linear classifier: feature hashing, weighted BCE loss,
//! AdamW updates with a linear learning-rate schedule, and the training
//! loop itself. Generic over the float type via `num_traits::Float`.

pub mod features;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

use std::path::PathBuf;

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{BiasLabel, NUM_LABELS};
use crate::splitter::LabelMatrix;

pub use features::{encode_article, featurize, tokenize, FeatureVector, BODY_CHAR_LIMIT};
pub use loss::{gradient, weighted_bce, Gradients, PROB_CLAMP_EPS};
pub use model::{forward, load_model, predict, save_model, ModelMeta, ModelState};
pub use optim::{adamw_step, linear_lr};
pub use train::{train, EpochStats, TrainHistory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("label `{label}` has no positive examples")]
    NoPositiveExamples { label: BiasLabel },
    #[error("training split is empty")]
    EmptyTrainSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

/// Training hyperparameters. Defaults fit the hashed linear model; the
/// learning rate used when fine-tuning transformer encoders is kept as
/// [`TrainConfig::transformer_finetune`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    default,
    bound(
        serialize = "T: Serialize",
        deserialize = "T: Deserialize<'de> + Float"
    )
)]
pub struct TrainConfig<T: Float> {
    pub lr0: T,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    pub seed: u64,
    pub threshold: T,
    pub feature_dim: usize,
    pub w_max: T,
}

impl<T: Float> Default for TrainConfig<T> {
    fn default() -> Self {
        let f = |x: f64| T::from(x).expect("constant fits scalar type");
        TrainConfig {
            lr0: f(0.1),
            epochs: 6,
            batch_size: 8,
            beta1: f(0.9),
            beta2: f(0.999),
            eps: f(1e-8),
            weight_decay: f(0.01),
            seed: 42,
            threshold: f(0.5),
            feature_dim: 1 << 18,
            w_max: f(100.0),
        }
    }
}

impl<T: Float> TrainConfig<T> {
    /// The low learning rate used when the classifier head sits on a
    /// fine-tuned transformer encoder rather than hashed features.
    pub fn transformer_finetune() -> Self {
        TrainConfig {
            lr0: T::from(2e-5).expect("constant fits scalar type"),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if !(self.lr0.is_finite() && self.lr0 > T::zero()) {
            return bad("lr0 must be finite and > 0");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b >= T::zero() && b < T::one()) {
                return Err(TrainError::InvalidConfig(format!(
                    "{name} must be in [0, 1)"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > T::zero()) {
            return bad("eps must be finite and > 0");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= T::zero()) {
            return bad("weight_decay must be finite and >= 0");
        }
        if !(self.threshold >= T::zero() && self.threshold <= T::one()) {
            return bad("threshold must be in [0, 1]");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be >= 2");
        }
        if !(self.w_max.is_finite() && self.w_max >= T::one()) {
            return bad("w_max must be finite and >= 1");
        }
        Ok(())
    }

    /// Copy with every scalar converted to f64, for hashing and reporting.
    pub fn to_f64(&self) -> TrainConfig<f64> {
        let g = |x: T| x.to_f64().expect("scalar converts to f64");
        TrainConfig {
            lr0: g(self.lr0),
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta1: g(self.beta1),
            beta2: g(self.beta2),
            eps: g(self.eps),
            weight_decay: g(self.weight_decay),
            seed: self.seed,
            threshold: g(self.threshold),
            feature_dim: self.feature_dim,
            w_max: g(self.w_max),
        }
    }

    /// Stable digest of the full hyperparameter set.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(&self.to_f64()).expect("config serializes");
        crate::util::sha256_hex(&[json.as_bytes()])
    }
}

/// Per-label positive-class weights, each in `[1, w_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights<T> {
    weights: [T; NUM_LABELS],
}

impl<T: Float> ClassWeights<T> {
    /// All weights 1 (unweighted loss).
    pub fn uniform() -> Self {
        ClassWeights {
            weights: [T::one(); NUM_LABELS],
        }
    }

    pub fn new(weights: [T; NUM_LABELS]) -> Result<Self, TrainError> {
        if weights.iter().any(|w| !(w.is_finite() && *w > T::zero())) {
            return Err(TrainError::InvalidInput(
                "class weights must be finite and > 0".to_string(),
            ));
        }
        Ok(ClassWeights { weights })
    }

    pub fn get(&self, label: BiasLabel) -> T {
        self.weights[label.index()]
    }

    pub fn as_array(&self) -> [T; NUM_LABELS] {
        self.weights
    }
}

/// Inverse-frequency weights: `w_l = clip(n_neg_l / n_pos_l, 1, w_max)`.
/// A label with zero positives is an error naming the label.
pub fn compute_class_weights<T: Float>(
    labels: &LabelMatrix,
    w_max: T,
) -> Result<ClassWeights<T>, TrainError> {
    let n = labels.len();
    let mut weights = [T::one(); NUM_LABELS];
    for label in BiasLabel::ALL {
        let pos = labels.positives(label);
        if pos == 0 {
            return Err(TrainError::NoPositiveExamples { label });
        }
        let neg = n - pos;
        let ratio = T::from(neg).unwrap() / T::from(pos).unwrap();
        weights[label.index()] = ratio.max(T::one()).min(w_max);
    }
    ClassWeights::new(weights)
}
