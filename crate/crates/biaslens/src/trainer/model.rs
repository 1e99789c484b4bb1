//! Model parameters, the forward pass, thresholded prediction, and the
//! JSON model file.

use std::path::Path;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::labels::{BiasLabel, BiasVector, NUM_LABELS};
use crate::trainer::{FeatureVector, TrainError};
use crate::util::atomic_write;

/// Per-label linear weights and biases plus AdamW moment buffers and the
/// step counter. Freshly constructed models are all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    dim: usize,
    weights: Vec<T>,
    bias: [T; NUM_LABELS],
    m_weights: Vec<T>,
    v_weights: Vec<T>,
    m_bias: [T; NUM_LABELS],
    v_bias: [T; NUM_LABELS],
    step_count: u64,
}

/// Mutable views over every parameter and moment buffer, for the optimizer.
pub(crate) struct ParamsMut<'a, T> {
    pub weights: &'a mut [T],
    pub bias: &'a mut [T; NUM_LABELS],
    pub m_weights: &'a mut [T],
    pub v_weights: &'a mut [T],
    pub m_bias: &'a mut [T; NUM_LABELS],
    pub v_bias: &'a mut [T; NUM_LABELS],
}

impl<T: Float> ModelState<T> {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "feature dim must be >= 2");
        ModelState {
            dim,
            weights: vec![T::zero(); NUM_LABELS * dim],
            bias: [T::zero(); NUM_LABELS],
            m_weights: vec![T::zero(); NUM_LABELS * dim],
            v_weights: vec![T::zero(); NUM_LABELS * dim],
            m_bias: [T::zero(); NUM_LABELS],
            v_bias: [T::zero(); NUM_LABELS],
            step_count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn weight_row(&self, label: BiasLabel) -> &[T] {
        let start = label.index() * self.dim;
        &self.weights[start..start + self.dim]
    }

    pub fn bias(&self, label: BiasLabel) -> T {
        self.bias[label.index()]
    }

    pub(crate) fn params_mut(&mut self) -> ParamsMut<'_, T> {
        ParamsMut {
            weights: &mut self.weights,
            bias: &mut self.bias,
            m_weights: &mut self.m_weights,
            v_weights: &mut self.v_weights,
            m_bias: &mut self.m_bias,
            v_bias: &mut self.v_bias,
        }
    }

    pub(crate) fn bump_step(&mut self) {
        self.step_count += 1;
    }

    pub(crate) fn set_params(&mut self, label: BiasLabel, entries: &[(u32, T)], bias: T) {
        let start = label.index() * self.dim;
        for &(i, v) in entries {
            self.weights[start + i as usize] = v;
        }
        self.bias[label.index()] = bias;
    }
}

fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Per-label probabilities `sigmoid(w_l . x + b_l)`.
pub fn forward<T: Float>(
    model: &ModelState<T>,
    features: &FeatureVector<T>,
) -> Result<[T; NUM_LABELS], TrainError> {
    if features.dim() != model.dim {
        return Err(TrainError::DimensionMismatch {
            expected: model.dim,
            found: features.dim(),
        });
    }
    let mut probs = [T::zero(); NUM_LABELS];
    for label in BiasLabel::ALL {
        let z = features.dot(model.weight_row(label)) + model.bias(label);
        probs[label.index()] = sigmoid(z);
    }
    Ok(probs)
}

/// Threshold the forward pass; probabilities equal to the threshold count
/// as positive.
pub fn predict<T: Float>(
    model: &ModelState<T>,
    features: &FeatureVector<T>,
    threshold: T,
) -> Result<BiasVector, TrainError> {
    let probs = forward(model, features)?;
    let mut out = BiasVector::zeros();
    for label in BiasLabel::ALL {
        out.set(label, probs[label.index()] >= threshold);
    }
    Ok(out)
}

/// Metadata stored alongside the parameters in a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub model_name: String,
    pub seed: u64,
    pub threshold: f64,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model_name: String,
    feature_dim: usize,
    labels: Vec<String>,
    seed: u64,
    threshold: f64,
    config_digest: String,
    bias: Vec<f64>,
    weights: Vec<Vec<(u32, f64)>>,
}

const MODEL_FORMAT: &str = "biaslens-model";
const MODEL_VERSION: u32 = 1;

/// Write weights, biases, and metadata as JSON. Weights are stored sparse
/// (nonzero entries only); optimizer moments are not persisted.
pub fn save_model<T: Float>(
    path: &Path,
    model: &ModelState<T>,
    meta: &ModelMeta,
) -> Result<(), TrainError> {
    let mut weights = Vec::with_capacity(NUM_LABELS);
    for label in BiasLabel::ALL {
        let row: Vec<(u32, f64)> = model
            .weight_row(label)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(i, v)| (i as u32, v.to_f64().expect("weight converts to f64")))
            .collect();
        weights.push(row);
    }
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model_name: meta.model_name.clone(),
        feature_dim: model.dim,
        labels: BiasLabel::ALL.iter().map(|l| l.key().to_string()).collect(),
        seed: meta.seed,
        threshold: meta.threshold,
        config_digest: meta.config_digest.clone(),
        bias: model
            .bias
            .iter()
            .map(|b| b.to_f64().expect("bias converts to f64"))
            .collect(),
        weights,
    };
    let mut json = serde_json::to_string(&file).expect("model serializes");
    json.push('\n');
    atomic_write(path, json.as_bytes()).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Load a model file, validating the format marker, label order, and
/// dimension. Moment buffers come back zeroed and the step count at 0.
pub fn load_model<T: Float>(path: &Path) -> Result<(ModelState<T>, ModelMeta), TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| TrainError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| TrainError::BadModelFile(e.to_string()))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(TrainError::BadModelFile(format!(
            "unsupported format `{}` version {}",
            file.format, file.version
        )));
    }
    let expected: Vec<String> = BiasLabel::ALL.iter().map(|l| l.key().to_string()).collect();
    if file.labels != expected {
        return Err(TrainError::BadModelFile(format!(
            "label order mismatch: expected {expected:?}, found {:?}",
            file.labels
        )));
    }
    if file.feature_dim < 2 {
        return Err(TrainError::BadModelFile(
            "feature_dim must be >= 2".to_string(),
        ));
    }
    if file.bias.len() != NUM_LABELS || file.weights.len() != NUM_LABELS {
        return Err(TrainError::BadModelFile(
            "bias and weights must each cover all labels".to_string(),
        ));
    }
    let mut model = ModelState::<T>::new(file.feature_dim);
    for label in BiasLabel::ALL {
        let row = &file.weights[label.index()];
        let mut entries = Vec::with_capacity(row.len());
        for &(i, v) in row {
            if i as usize >= file.feature_dim {
                return Err(TrainError::BadModelFile(format!(
                    "weight index {i} out of range for dim {}",
                    file.feature_dim
                )));
            }
            if !v.is_finite() {
                return Err(TrainError::BadModelFile("non-finite weight".to_string()));
            }
            entries.push((i, T::from(v).expect("weight fits scalar type")));
        }
        let bias = file.bias[label.index()];
        if !bias.is_finite() {
            return Err(TrainError::BadModelFile("non-finite bias".to_string()));
        }
        model.set_params(
            label,
            &entries,
            T::from(bias).expect("bias fits scalar type"),
        );
    }
    let meta = ModelMeta {
        model_name: file.model_name,
        seed: file.seed,
        threshold: file.threshold,
        config_digest: file.config_digest,
    };
    Ok((model, meta))
}
