//! Run configuration, orchestration of the analysis stages, and the CSV,
//! JSON and SVG artifacts they emit.

pub mod charts;
pub mod cli;
mod config;
mod pipeline;

use thiserror::Error;

pub use config::{Needs, PcaSection, ProbeSection, RunConfig, SaeSection, ViolinSection};
pub use pipeline::{
    load_sets, run_all, run_pca, run_probe_sweep, run_shift, run_top_features, run_violin, shift_centroids, Outputs,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl ReportError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Usage(_) | ReportError::Validation(_) => 1,
            ReportError::Runtime(_) => 2,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ReportError {
            fn from(e: $t) -> Self {
                ReportError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    crate::corpus::CorpusError,
    crate::store::StoreError,
    crate::probes::ProbeError,
    crate::sae::SaeError,
    crate::geometry::GeometryError,
    crate::synth::SynthError,
    std::io::Error,
    csv::Error,
    serde_json::Error
);
