use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SaeError;
use crate::matrix::Matrix;
use crate::store::{read_container, ActivationStore, StoreError, Tensor};

/// Encoder `W_enc` (d × d_SAE), JumpReLU thresholds, decoder `W_dec` (d_SAE × d).
#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    w_enc: Matrix,
    b_enc: Vec<f32>,
    theta: Vec<f32>,
    w_dec: Matrix,
    b_dec: Vec<f32>,
    layer: usize,
}

impl SaeModel {
    pub fn new(
        w_enc: Matrix,
        b_enc: Vec<f32>,
        theta: Vec<f32>,
        w_dec: Matrix,
        b_dec: Vec<f32>,
        layer: usize,
    ) -> Result<Self, SaeError> {
        let (d, width) = (w_enc.rows(), w_enc.cols());
        let bad = |m: String| Err(SaeError::InvalidModel(m));
        if width <= d {
            return bad(format!("d_SAE ({width}) must exceed d ({d})"));
        }
        if b_enc.len() != width || theta.len() != width {
            return bad(format!("b_enc/threshold lengths {}/{} differ from d_SAE {width}", b_enc.len(), theta.len()));
        }
        if w_dec.rows() != width || w_dec.cols() != d || b_dec.len() != d {
            return bad(format!(
                "decoder is {}x{} with bias {}, expected {width}x{d} with bias {d}",
                w_dec.rows(),
                w_dec.cols(),
                b_dec.len()
            ));
        }
        let finite = |v: &[f32]| v.iter().all(|x| x.is_finite());
        if !(finite(w_enc.as_slice()) && finite(&b_enc) && finite(&theta) && finite(w_dec.as_slice()) && finite(&b_dec)) {
            return bad("non-finite weight".into());
        }
        if theta.iter().any(|&t| t < 0.0) {
            return bad("negative JumpReLU threshold".into());
        }
        Ok(Self { w_enc, b_enc, theta, w_dec, b_dec, layer })
    }

    pub fn d(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn width(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f32] {
        &self.b_enc
    }

    pub fn theta(&self) -> &[f32] {
        &self.theta
    }

    pub fn w_dec(&self) -> &Matrix {
        &self.w_dec
    }

    pub fn b_dec(&self) -> &[f32] {
        &self.b_dec
    }

    /// Pre-activation `z_i` of a single feature.
    pub(crate) fn pre_activation(&self, x: &[f32], i: usize) -> f64 {
        let w = self.width();
        let mut z = f64::from(self.b_enc[i]);
        for (j, &xj) in x.iter().enumerate() {
            z += f64::from(xj) * f64::from(self.w_enc.as_slice()[j * w + i]);
        }
        z
    }

    /// JumpReLU output of a single feature.
    pub(crate) fn activation(&self, x: &[f32], i: usize) -> f64 {
        let z = self.pre_activation(x, i);
        if z > f64::from(self.theta[i]) {
            z
        } else {
            0.0
        }
    }
}

/// Support of an encoded vector; indices ascend and every value exceeds its threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFeatures {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub width: usize,
}

impl SparseFeatures {
    pub fn empty(width: usize) -> Self {
        Self { indices: Vec::new(), values: Vec::new(), width }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        self.add_to(&mut out, 1.0);
        out
    }

    pub(crate) fn add_to(&self, acc: &mut [f64], scale: f64) {
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc[i as usize] += scale * v;
        }
    }
}

/// `z = W_encᵀx + b_enc` accumulated in f64, then `f_i = z_i` where `z_i > θ_i`.
pub fn encode(sae: &SaeModel, x: &[f32]) -> Result<SparseFeatures, SaeError> {
    if x.len() != sae.d() {
        return Err(SaeError::DimensionMismatch { expected: sae.d(), got: x.len() });
    }
    if let Some(col) = x.iter().position(|v| !v.is_finite()) {
        return Err(SaeError::NonFinite { row: 0, col });
    }
    Ok(encode_unchecked(sae, x, &mut vec![0.0; sae.width()]))
}

fn encode_unchecked(sae: &SaeModel, x: &[f32], z: &mut [f64]) -> SparseFeatures {
    for (zi, &b) in z.iter_mut().zip(&sae.b_enc) {
        *zi = f64::from(b);
    }
    for (xj, w_row) in x.iter().zip(sae.w_enc.iter_rows()) {
        let xj = f64::from(*xj);
        if xj == 0.0 {
            continue;
        }
        for (zi, &w) in z.iter_mut().zip(w_row) {
            *zi += xj * f64::from(w);
        }
    }
    let mut out = SparseFeatures::empty(sae.width());
    for (i, (&zi, &t)) in z.iter().zip(&sae.theta).enumerate() {
        if zi > f64::from(t) {
            out.indices.push(i as u32);
            out.values.push(zi);
        }
    }
    out
}

/// Encodes every row (in parallel, output in row order).
pub fn encode_rows(sae: &SaeModel, x: &Matrix) -> Result<Vec<SparseFeatures>, SaeError> {
    if x.cols() != sae.d() {
        return Err(SaeError::DimensionMismatch { expected: sae.d(), got: x.cols() });
    }
    if let Some((row, col)) = x.first_non_finite() {
        return Err(SaeError::NonFinite { row, col });
    }
    Ok((0..x.rows())
        .into_par_iter()
        .map_init(|| vec![0.0; sae.width()], |z, i| encode_unchecked(sae, x.row(i), z))
        .collect())
}

/// `b_dec + Σ f_i · W_dec[i, :]`.
pub fn decode(sae: &SaeModel, f: &SparseFeatures) -> Result<Vec<f64>, SaeError> {
    if f.width != sae.width() {
        return Err(SaeError::DimensionMismatch { expected: sae.width(), got: f.width });
    }
    let mut out: Vec<f64> = sae.b_dec.iter().map(|&b| f64::from(b)).collect();
    for (&i, &v) in f.indices.iter().zip(&f.values) {
        let i = i as usize;
        if i >= sae.width() {
            return Err(SaeError::IndexOutOfRange { index: i, width: sae.width() });
        }
        for (o, &w) in out.iter_mut().zip(sae.w_dec.row(i)) {
            *o += v * f64::from(w);
        }
    }
    Ok(out)
}

const CHUNK: usize = 256;

/// Dense mean of encoded rows. Partial sums over fixed row chunks are merged
/// in order, so the result does not depend on the thread count.
pub fn mean_features(sae: &SaeModel, x: &Matrix) -> Result<Vec<f64>, SaeError> {
    if x.rows() == 0 {
        return Err(SaeError::Empty("no rows to average".into()));
    }
    let encoded = encode_rows(sae, x)?;
    Ok(mean_of(&encoded, sae.width()))
}

pub(crate) fn mean_of(encoded: &[SparseFeatures], width: usize) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = encoded
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; width];
            for f in chunk {
                f.add_to(&mut acc, 1.0);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for p in partials {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    let n = encoded.len() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    total
}

/// Condition centroid `f̄` over a store whose layer matches the SAE.
pub fn condition_mean(sae: &SaeModel, store: &ActivationStore) -> Result<Vec<f64>, SaeError> {
    if store.layer() != sae.layer() {
        return Err(SaeError::LayerMismatch { store: store.layer(), sae: sae.layer() });
    }
    mean_features(sae, &store.matrix)
}

/// Tensor names inside an SAE weight file. Orientation is inferred from the
/// bias lengths, so releases storing `W_enc` as d_SAE × d load unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeTensorNames {
    pub w_enc: String,
    pub b_enc: String,
    pub threshold: String,
    pub w_dec: String,
    pub b_dec: String,
}

impl Default for SaeTensorNames {
    fn default() -> Self {
        Self {
            w_enc: "W_enc".into(),
            b_enc: "b_enc".into(),
            threshold: "threshold".into(),
            w_dec: "W_dec".into(),
            b_dec: "b_dec".into(),
        }
    }
}

impl SaeTensorNames {
    /// Names used by torch-style checkpoints (`encoder.weight`, ...).
    pub fn torch() -> Self {
        Self {
            w_enc: "encoder.weight".into(),
            b_enc: "encoder.bias".into(),
            threshold: "log_jumprelu_threshold".into(),
            w_dec: "decoder.weight".into(),
            b_dec: "decoder.bias".into(),
        }
    }
}

fn oriented(t: &Tensor, name: &str, rows: usize, cols: usize) -> Result<Matrix, SaeError> {
    let m = t
        .to_matrix()
        .ok_or_else(|| SaeError::InvalidModel(format!("`{name}` is not a matrix: shape {:?}", t.shape)))?;
    if m.rows() == rows && m.cols() == cols {
        Ok(m)
    } else if m.rows() == cols && m.cols() == rows {
        Ok(m.transpose())
    } else {
        Err(SaeError::InvalidModel(format!("`{name}` has shape {:?}, expected {rows}x{cols}", t.shape)))
    }
}

/// Loads and validates an SAE from a tensor container. A threshold tensor
/// whose name starts with `log_` is exponentiated; a single threshold value
/// is broadcast to every feature.
pub fn load_sae(path: &Path, names: &SaeTensorNames, layer: usize) -> Result<SaeModel, SaeError> {
    let map = read_container(path)?;
    let get = |n: &str| map.get(n).ok_or_else(|| SaeError::Store(StoreError::MissingTensor(n.into())));
    let b_enc = get(&names.b_enc)?.data.clone();
    let b_dec = get(&names.b_dec)?.data.clone();
    let (d, width) = (b_dec.len(), b_enc.len());
    let w_enc = oriented(get(&names.w_enc)?, &names.w_enc, d, width)?;
    let w_dec = oriented(get(&names.w_dec)?, &names.w_dec, width, d)?;
    let mut theta = get(&names.threshold)?.data.clone();
    if names.threshold.starts_with("log_") {
        theta.iter_mut().for_each(|t| *t = t.exp());
    }
    if theta.len() == 1 {
        theta = vec![theta[0]; width];
    }
    SaeModel::new(w_enc, b_enc, theta, w_dec, b_dec, layer)
}
