//! The mini-batch training loop: seeded shuffling, linear learning-rate
//! decay, AdamW steps, and per-epoch loss history.

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::labels::BiasVector;
use crate::trainer::loss::{eval_loss, gradient_into, Gradients};
use crate::trainer::optim::{adamw_step, linear_lr};
use crate::trainer::{ClassWeights, FeatureVector, ModelState, TrainConfig, TrainError};

/// Mean train loss (and val loss when a validation split exists) for one
/// epoch. Train loss is the mean of pre-update batch losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub total_steps: u64,
}

fn validate_inputs<T: Float>(
    features: &[FeatureVector<T>],
    labels: &[BiasVector],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &TrainConfig<T>,
) -> Result<(), TrainError> {
    config.validate()?;
    if features.len() != labels.len() {
        return Err(TrainError::InvalidInput(format!(
            "features and labels lengths differ: {} vs {}",
            features.len(),
            labels.len()
        )));
    }
    if train_idx.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    for &i in train_idx.iter().chain(val_idx) {
        if i >= features.len() {
            return Err(TrainError::InvalidInput(format!(
                "split index {i} out of range for {} examples",
                features.len()
            )));
        }
    }
    for f in features {
        if f.dim() != config.feature_dim {
            return Err(TrainError::DimensionMismatch {
                expected: config.feature_dim,
                found: f.dim(),
            });
        }
    }
    Ok(())
}

/// Train a zero-initialized model on `train_idx`, reporting validation
/// loss on `val_idx` after each epoch (pass an empty slice to skip).
///
/// Deterministic: the same inputs, config, and seed produce bit-identical
/// parameters.
pub fn train<T: Float>(
    features: &[FeatureVector<T>],
    labels: &[BiasVector],
    train_idx: &[usize],
    val_idx: &[usize],
    weights: &ClassWeights<T>,
    config: &TrainConfig<T>,
) -> Result<(ModelState<T>, TrainHistory), TrainError> {
    validate_inputs(features, labels, train_idx, val_idx, config)?;

    let mut model = ModelState::<T>::new(config.feature_dim);
    let mut grads = Gradients::<T>::zeros(config.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = train_idx.to_vec();

    let batches_per_epoch = order.len().div_ceil(config.batch_size) as u64;
    let total_steps = batches_per_epoch * config.epochs as u64;
    let mut step = 0u64;
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(config.epochs),
        total_steps,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = T::zero();
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let lr = linear_lr(step, total_steps, config.lr0);
            let loss = gradient_into(&model, features, labels, batch, weights, &mut grads)?;
            adamw_step(&mut model, &grads, lr, config)?;
            epoch_loss = epoch_loss + loss;
            batches += 1;
            step += 1;
        }
        let train_loss = (epoch_loss / T::from(batches).unwrap())
            .to_f64()
            .expect("loss converts to f64");
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            Some(
                eval_loss(&model, features, labels, val_idx, weights)?
                    .to_f64()
                    .expect("loss converts to f64"),
            )
        };
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
    }
    debug_assert_eq!(step, total_steps);
    debug_assert_eq!(model.step_count(), total_steps);
    Ok((model, history))
}
