//! Media bias detection pipeline: seven-flag annotation of news articles
//! through a chat-completion endpoint, filtered multilabel dataset
//! assembly, iterative stratified fold splitting, weighted linear
//! classifier training on hashed bag-of-words features, and per-bias
//! precision/recall/F1 reporting.
//!
//! The numeric core (features, model, loss, optimizer) is generic over
//! the scalar type through `num_traits::Float`; the aliases at the crate
//! root pin the two supported instantiations.

pub mod annotator;
pub mod corpus;
pub mod labels;
pub mod metrics;
pub mod splitter;
pub mod trainer;
pub mod util;

pub use labels::{BiasLabel, BiasVector, NUM_LABELS};

pub type FeatureVectorF64 = trainer::FeatureVector<f64>;
pub type FeatureVectorF32 = trainer::FeatureVector<f32>;
pub type ModelStateF64 = trainer::ModelState<f64>;
pub type ModelStateF32 = trainer::ModelState<f32>;
pub type TrainConfigF64 = trainer::TrainConfig<f64>;
pub type TrainConfigF32 = trainer::TrainConfig<f32>;
pub type ClassWeightsF64 = trainer::ClassWeights<f64>;
pub type ClassWeightsF32 = trainer::ClassWeights<f32>;
