use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::container::{read_container, serialize_container, write_atomic, Tensor};
use super::StoreError;
use crate::corpus::{Condition, StatementSet};
use crate::matrix::Matrix;

/// Name of the activation matrix inside a store container.
pub const ACTIVATIONS_TENSOR: &str = "acts";

/// Sidecar metadata written next to every activation container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub model_id: String,
    pub layer: usize,
    pub condition: Condition,
    pub dataset_id: String,
    pub n_rows: usize,
    pub d: usize,
    pub tokenizer_hash: String,
    pub token_position_rule: String,
    pub extraction_timestamp: String,
    pub alignment_digest: String,
    /// Extractor-specific fields (hook point, captured token positions, ...).
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Final-token residual activations for one (model, layer, condition, dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStore {
    pub manifest: StoreManifest,
    pub matrix: Matrix,
}

impl ActivationStore {
    pub fn layer(&self) -> usize {
        self.manifest.layer
    }

    pub fn condition(&self) -> Condition {
        self.manifest.condition
    }

    pub fn dataset_id(&self) -> &str {
        &self.manifest.dataset_id
    }

    pub fn model_id(&self) -> &str {
        &self.manifest.model_id
    }

    pub fn d(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.rows()
    }
}

/// SHA-256 over the statement texts joined by LF, lowercase hex.
pub fn alignment_digest<'a>(texts: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for (i, t) in texts.into_iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(t.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// `<root>/<model>/<dataset>/<condition>/layer_<LLL>.safetensors`
pub fn store_path(root: &Path, model_id: &str, dataset_id: &str, condition: Condition, layer: usize) -> PathBuf {
    root.join(model_id)
        .join(dataset_id)
        .join(condition.as_str())
        .join(format!("layer_{layer:03}.safetensors"))
}

fn manifest_path(container: &Path) -> PathBuf {
    let mut p = container.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes the activation container and its manifest. The manifest's row count
/// and width are taken from the matrix.
pub fn write_activation_store(path: &Path, manifest: &StoreManifest, matrix: &Matrix) -> Result<(), StoreError> {
    let tensor = Tensor::from(matrix);
    let bytes = serialize_container([(ACTIVATIONS_TENSOR, &tensor)])?;
    let mut manifest = manifest.clone();
    manifest.n_rows = matrix.rows();
    manifest.d = matrix.cols();
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(path, &bytes)?;
    write_atomic(&manifest_path(path), &json)
}

pub fn read_manifest(path: &Path) -> Result<StoreManifest, StoreError> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| StoreError::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Manifest {
        path: mpath.display().to_string(),
        message: e.to_string(),
    })
}

/// Opens a store and checks it against the statement list it claims to align
/// with: dataset id, row count, alignment digest, then finiteness.
pub fn open_activation_store(path: &Path, expected: &StatementSet) -> Result<ActivationStore, StoreError> {
    let manifest = read_manifest(path)?;
    let mut tensors = read_container(path)?;
    let acts = tensors
        .remove(ACTIVATIONS_TENSOR)
        .ok_or_else(|| StoreError::MissingTensor(ACTIVATIONS_TENSOR.into()))?;
    let matrix = match acts.shape.as_slice() {
        [r, c] => Matrix::from_vec(*r, *c, acts.data),
        other => {
            return Err(StoreError::Manifest {
                path: path.display().to_string(),
                message: format!("`acts` must be rank 2, has shape {other:?}"),
            })
        }
    };
    if manifest.dataset_id != expected.dataset_id {
        return Err(StoreError::DatasetMismatch {
            store: manifest.dataset_id,
            expected: expected.dataset_id.clone(),
        });
    }
    if matrix.rows() != expected.len() || manifest.n_rows != expected.len() {
        return Err(StoreError::RowCountMismatch {
            dataset_id: expected.dataset_id.clone(),
            store: matrix.rows(),
            expected: expected.len(),
        });
    }
    let computed = alignment_digest(expected.texts());
    if computed != manifest.alignment_digest {
        return Err(StoreError::DigestMismatch {
            dataset_id: expected.dataset_id.clone(),
            manifest: manifest.alignment_digest,
            computed,
        });
    }
    if let Some((row, col)) = matrix.first_non_finite() {
        return Err(StoreError::NonFinite { row, col });
    }
    Ok(ActivationStore { manifest, matrix })
}
