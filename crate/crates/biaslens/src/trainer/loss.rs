//! Weighted binary cross-entropy over the seven labels and its analytic
//! gradient.

use num_traits::Float;

use crate::labels::{BiasLabel, BiasVector, NUM_LABELS};
use crate::trainer::model::forward;
use crate::trainer::{ClassWeights, FeatureVector, ModelState, TrainError};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the logarithms.
pub const PROB_CLAMP_EPS: f64 = 1e-7;

fn clamp_prob<T: Float>(p: T) -> T {
    let lo = T::from(PROB_CLAMP_EPS).unwrap();
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

/// Loss for one example: mean over labels of
/// `-(w_l * y_l * ln(p_l) + (1 - y_l) * ln(1 - p_l))`.
pub fn example_weighted_bce<T: Float>(
    probs: &[T; NUM_LABELS],
    target: &BiasVector,
    weights: &ClassWeights<T>,
) -> T {
    let mut sum = T::zero();
    for label in BiasLabel::ALL {
        let p = clamp_prob(probs[label.index()]);
        let term = if target.get(label) {
            weights.get(label) * p.ln()
        } else {
            (T::one() - p).ln()
        };
        sum = sum - term;
    }
    sum / T::from(NUM_LABELS).unwrap()
}

/// Mean of [`example_weighted_bce`] over a batch. The two slices must be
/// the same nonzero length.
pub fn weighted_bce<T: Float>(
    probs: &[[T; NUM_LABELS]],
    targets: &[BiasVector],
    weights: &ClassWeights<T>,
) -> Result<T, TrainError> {
    if probs.len() != targets.len() {
        return Err(TrainError::InvalidInput(format!(
            "probs and targets lengths differ: {} vs {}",
            probs.len(),
            targets.len()
        )));
    }
    if probs.is_empty() {
        return Err(TrainError::InvalidInput(
            "batch must be nonempty".to_string(),
        ));
    }
    let mut sum = T::zero();
    for (p, t) in probs.iter().zip(targets) {
        sum = sum + example_weighted_bce(p, t, weights);
    }
    Ok(sum / T::from(probs.len()).unwrap())
}

/// Loss of `model` on the examples selected by `idx`.
pub fn eval_loss<T: Float>(
    model: &ModelState<T>,
    features: &[FeatureVector<T>],
    labels: &[BiasVector],
    idx: &[usize],
    weights: &ClassWeights<T>,
) -> Result<T, TrainError> {
    if idx.is_empty() {
        return Err(TrainError::InvalidInput(
            "index set must be nonempty".to_string(),
        ));
    }
    let mut sum = T::zero();
    for &i in idx {
        let probs = forward(model, &features[i])?;
        sum = sum + example_weighted_bce(&probs, &labels[i], weights);
    }
    Ok(sum / T::from(idx.len()).unwrap())
}

/// Dense gradient buffers matching a model's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    dim: usize,
    pub d_weights: Vec<T>,
    pub d_bias: [T; NUM_LABELS],
}

impl<T: Float> Gradients<T> {
    pub fn zeros(dim: usize) -> Self {
        Gradients {
            dim,
            d_weights: vec![T::zero(); NUM_LABELS * dim],
            d_bias: [T::zero(); NUM_LABELS],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight_row(&self, label: BiasLabel) -> &[T] {
        let start = label.index() * self.dim;
        &self.d_weights[start..start + self.dim]
    }

    fn reset(&mut self) {
        for g in &mut self.d_weights {
            *g = T::zero();
        }
        self.d_bias = [T::zero(); NUM_LABELS];
    }
}

/// Accumulate the batch gradient into `out` (after zeroing it) and return
/// the batch loss. Per label and example the logit gradient is
/// `(w_l * y_l * (p_l - 1) + (1 - y_l) * p_l) / (7 * batch_size)`.
pub fn gradient_into<T: Float>(
    model: &ModelState<T>,
    features: &[FeatureVector<T>],
    labels: &[BiasVector],
    batch: &[usize],
    weights: &ClassWeights<T>,
    out: &mut Gradients<T>,
) -> Result<T, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::InvalidInput(
            "batch must be nonempty".to_string(),
        ));
    }
    if out.dim != model.dim() {
        return Err(TrainError::DimensionMismatch {
            expected: model.dim(),
            found: out.dim,
        });
    }
    out.reset();
    let scale = T::one() / (T::from(NUM_LABELS).unwrap() * T::from(batch.len()).unwrap());
    let mut loss = T::zero();
    for &i in batch {
        let x = &features[i];
        let target = &labels[i];
        let probs = forward(model, x)?;
        loss = loss + example_weighted_bce(&probs, target, weights);
        for label in BiasLabel::ALL {
            let p = probs[label.index()];
            let g = if target.get(label) {
                weights.get(label) * (p - T::one())
            } else {
                p
            } * scale;
            out.d_bias[label.index()] = out.d_bias[label.index()] + g;
            let start = label.index() * out.dim;
            for &(fi, fv) in x.entries() {
                let slot = start + fi as usize;
                out.d_weights[slot] = out.d_weights[slot] + g * fv;
            }
        }
    }
    Ok(loss / T::from(batch.len()).unwrap())
}

/// Allocate and fill gradient buffers for the batch `features`/`labels`.
pub fn gradient<T: Float>(
    model: &ModelState<T>,
    features: &[FeatureVector<T>],
    labels: &[BiasVector],
    weights: &ClassWeights<T>,
) -> Result<Gradients<T>, TrainError> {
    if features.len() != labels.len() {
        return Err(TrainError::InvalidInput(format!(
            "features and labels lengths differ: {} vs {}",
            features.len(),
            labels.len()
        )));
    }
    let mut out = Gradients::zeros(model.dim());
    let batch: Vec<usize> = (0..features.len()).collect();
    gradient_into(model, features, labels, &batch, weights, &mut out)?;
    Ok(out)
}
