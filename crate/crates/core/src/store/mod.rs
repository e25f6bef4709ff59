//! On-disk formats shared with the activation extractor.
//!
//! Tensors live in a little-endian container: an 8-byte header length, a JSON
//! header mapping names to `{dtype, shape, data_offsets}`, then the raw payload.
//! Activation stores add a JSON sidecar manifest tying each matrix to the
//! statement list it was extracted from.

mod activation;
mod container;

use thiserror::Error;

pub use activation::{
    alignment_digest, open_activation_store, read_manifest, store_path, write_activation_store, ActivationStore,
    StoreManifest, ACTIVATIONS_TENSOR,
};
pub use container::{parse_container, read_container, serialize_container, write_container, Dtype, Tensor};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("file too short for a header length ({0} bytes)")]
    MissingHeaderLength(usize),
    #[error("header length {header_len} exceeds file size {file_len}")]
    HeaderOutOfBounds { header_len: u64, file_len: usize },
    #[error("malformed header JSON: {0}")]
    MalformedHeader(String),
    #[error("tensor `{name}`: unsupported dtype `{dtype}`")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("tensor `{name}`: shape {shape:?} needs {expected} bytes, offsets span {actual}")]
    ShapeMismatch { name: String, shape: Vec<usize>, expected: usize, actual: usize },
    #[error("tensors `{first}` and `{second}` have overlapping data offsets")]
    OverlappingOffsets { first: String, second: String },
    #[error("payload gap before tensor `{name}` at byte {at}")]
    OffsetGap { name: String, at: usize },
    #[error("payload truncated: tensors need {needed} bytes, payload has {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("payload has {extra} trailing bytes not covered by any tensor")]
    TrailingBytes { extra: usize },
    #[error("duplicate tensor name `{0}`")]
    DuplicateName(String),
    #[error("tensor `{name}`: data length {len} does not match shape {shape:?}")]
    InvalidTensor { name: String, shape: Vec<usize>, len: usize },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("row count mismatch: store has {store} rows, statement set {dataset_id} has {expected}")]
    RowCountMismatch { dataset_id: String, store: usize, expected: usize },
    #[error("alignment digest mismatch for {dataset_id}: manifest {manifest}, statements {computed}")]
    DigestMismatch { dataset_id: String, manifest: String, computed: String },
    #[error("store belongs to dataset {store}, opened against {expected}")]
    DatasetMismatch { store: String, expected: String },
    #[error("non-finite activation at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
}

impl StoreError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        StoreError::Io { path: path.display().to_string(), source }
    }
}
