//! Linear probes over layer activations: logistic regression, the TTPD
//! general/polarity direction decomposition, and layer-wise sweeps.

mod lr;
mod persist;
mod sweep;
mod ttpd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lr::{predict_lr, train_lr, LrConfig, LrFit, LrProbe, Standardizer};
pub use persist::{load_lr, load_ttpd, save_lr, save_ttpd};
pub use sweep::{answer_labels, layer_sweep, DatasetActs, Protocol, SweepConfig, SweepInput, SweepResult, SweepRow};
pub use ttpd::{classify_ttpd, fit_ttpd, Centering, TtpdFit, TtpdGroup, TtpdProbe};

use crate::corpus::Condition;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("labels contain a single class; need both true and false rows")]
    DegenerateLabels,
    #[error("need at least {min} rows, got {got}")]
    TooFewRows { min: usize, got: usize },
    #[error("non-finite input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label count {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing layer stores: {0:?}")]
    MissingLayers(Vec<usize>),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProbeKind {
    #[serde(rename = "LR", alias = "lr")]
    Lr,
    #[serde(rename = "TTPD", alias = "ttpd")]
    Ttpd,
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::Lr => "LR",
            ProbeKind::Ttpd => "TTPD",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ProbeKind::Lr),
            "ttpd" => Ok(ProbeKind::Ttpd),
            other => Err(format!("unknown probe kind `{other}`")),
        }
    }
}

/// Where a probe was trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeTag {
    pub layer: usize,
    pub condition: Condition,
}

/// Percentage of matching predictions.
pub fn accuracy(pred: &[bool], truth: &[bool]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / pred.len() as f64
}

pub(crate) fn check_rows(x: &crate::Matrix, labels: usize) -> Result<(), ProbeError> {
    if labels != x.rows() {
        return Err(ProbeError::LabelMismatch { labels, rows: x.rows() });
    }
    if let Some((row, col)) = x.first_non_finite() {
        return Err(ProbeError::NonFinite { row, col });
    }
    Ok(())
}
