//! JumpReLU sparse autoencoders: loading, sparse encoding, condition
//! centroids, shift metrics with bootstrap bands and feature rankings.

mod features;
mod metrics;
mod model;
mod shift;

use thiserror::Error;

pub use features::{feature_distributions, top_k_features, FeatureRanking, RankedFeature, ViolinRecord};
pub use metrics::{shift_metrics, ShiftMetrics, DEFAULT_EPS};
pub use model::{condition_mean, decode, encode, encode_rows, load_sae, mean_features, SaeModel, SaeTensorNames, SparseFeatures};
pub use shift::{
    layer_shift_sweep, ConditionPair, PerSampleRow, ShiftConfig, ShiftInput, ShiftReport, ShiftRow,
};

#[derive(Debug, Error)]
pub enum SaeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid SAE weights: {0}")]
    InvalidModel(String),
    #[error("feature index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("layer mismatch: store is layer {store}, SAE is layer {sae}")]
    LayerMismatch { store: usize, sae: usize },
    #[error("layers without an SAE: {0:?}")]
    MissingSae(Vec<usize>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}
