//! PCA fitting and 2-D projections of raw activations.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Condition;
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("k = {k} is outside 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label count {labels} does not match row count {rows}")]
    LabelMismatch { labels: usize, rows: usize },
}

/// Orthonormal principal axes (rows of `components`) with variances in
/// descending order. Each axis has its largest-magnitude entry positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn d(&self) -> usize {
        self.mean.len()
    }
}

fn centred(x: &Matrix, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.rows(), x.cols(), |i, j| f64::from(x.get(i, j)) - mean[j])
}

fn normalise(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn orthogonalise(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Modified Gram–Schmidt over `vectors`; any vector that collapses is
/// replaced by the standard basis vector with the largest remaining norm.
fn orthonormal_basis(vectors: Vec<Vec<f64>>, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        let before = normalise(&mut v);
        orthogonalise(&mut v, &basis);
        orthogonalise(&mut v, &basis);
        if before == 0.0 || normalise(&mut v) < 1e-8 {
            v = (0..d)
                .map(|j| {
                    let mut e = vec![0.0; d];
                    e[j] = 1.0;
                    orthogonalise(&mut e, &basis);
                    e
                })
                .max_by(|a, b| {
                    let (na, nb) = (a.iter().map(|x| x * x).sum::<f64>(), b.iter().map(|x| x * x).sum::<f64>());
                    na.total_cmp(&nb)
                })
                .expect("d > 0");
            orthogonalise(&mut v, &basis);
            normalise(&mut v);
        }
        basis.push(v);
    }
    basis
}

fn apply_sign_rule(v: &mut [f64]) {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = j;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits `k` principal components of the mean-centred rows. The sample
/// covariance (denominator N − 1) is decomposed directly when d ≤ N and via
/// the N × N Gram matrix otherwise.
pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel, GeometryError> {
    let (n, d) = (x.rows(), x.cols());
    let max = n.min(d);
    if k == 0 || k > max {
        return Err(GeometryError::InvalidK { k, max });
    }
    if let Some((row, col)) = x.first_non_finite() {
        return Err(GeometryError::NonFinite { row, col });
    }
    let mean = x.column_means();
    let xc = centred(x, &mean);
    let denom = (n.max(2) - 1) as f64;

    let (values, vectors): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let cov = (xc.transpose() * &xc) / denom;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(k)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
            .unzip()
    } else {
        let gram = (&xc * xc.transpose()) / denom;
        let eig = SymmetricEigen::new(gram);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .take(k)
            .map(|i| {
                let u = eig.eigenvectors.column(i);
                let v = xc.transpose() * u;
                let lambda = eig.eigenvalues[i];
                let v: Vec<f64> = if lambda > 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE) {
                    v.iter().copied().collect()
                } else {
                    vec![0.0; d]
                };
                (lambda, v)
            })
            .unzip()
    };
    let mut components = orthonormal_basis(vectors, d);
    components.iter_mut().for_each(|c| apply_sign_rule(c));
    let explained_variance = values.into_iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel { mean, components, explained_variance })
}

/// `(x − mean) · componentsᵀ` for every row.
pub fn pca_project(model: &PcaModel, x: &Matrix) -> Result<Vec<Vec<f64>>, GeometryError> {
    if x.cols() != model.d() {
        return Err(GeometryError::DimensionMismatch { expected: model.d(), got: x.cols() });
    }
    Ok(x.iter_rows()
        .map(|r| {
            model
                .components
                .iter()
                .map(|c| r.iter().zip(&model.mean).zip(c).map(|((&v, m), c)| (f64::from(v) - m) * c).sum())
                .collect()
        })
        .collect())
}

/// Per-condition fits (one panel each) or a single joint fit across conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    #[default]
    PerCondition,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub layer: usize,
    pub condition: Condition,
    pub row: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub label: bool,
}

pub const SCATTER_HEADER: [&str; 6] = ["layer", "condition", "row", "pc1", "pc2", "label"];

/// 2-D coordinates of every row at one layer.
pub fn layer_scatter(
    layer: usize,
    per_condition: &BTreeMap<Condition, (Matrix, Vec<bool>)>,
    mode: PcaMode,
) -> Result<Vec<ScatterRow>, GeometryError> {
    for (x, labels) in per_condition.values() {
        if x.rows() != labels.len() {
            return Err(GeometryError::LabelMismatch { labels: labels.len(), rows: x.rows() });
        }
    }
    let joint = match mode {
        PcaMode::Joint => {
            let all = Matrix::vstack(per_condition.values().map(|(x, _)| x)).ok_or_else(|| {
                let d = per_condition.values().next().map_or(0, |(x, _)| x.cols());
                let got = per_condition.values().map(|(x, _)| x.cols()).find(|&c| c != d).unwrap_or(0);
                GeometryError::DimensionMismatch { expected: d, got }
            })?;
            Some(pca_fit(&all, 2)?)
        }
        PcaMode::PerCondition => None,
    };
    let mut out = Vec::new();
    for (&condition, (x, labels)) in per_condition {
        let model = match &joint {
            Some(m) => m.clone(),
            None => pca_fit(x, 2)?,
        };
        for (row, (c, &label)) in pca_project(&model, x)?.into_iter().zip(labels).enumerate() {
            out.push(ScatterRow { layer, condition, row, pc1: c[0], pc2: c[1], label });
        }
    }
    Ok(out)
}

pub fn write_scatter_csv(rows: &[ScatterRow], w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SCATTER_HEADER)?;
    for r in rows {
        out.write_record([
            r.layer.to_string(),
            r.condition.to_string(),
            r.row.to_string(),
            r.pc1.to_string(),
            r.pc2.to_string(),
            u8::from(r.label).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_line() {
        let rows: Vec<[f32; 3]> = (0..6).map(|i| [0.0, i as f32 - 2.5, 0.0]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 2).unwrap();
        assert!((m.components[0][1] - 1.0).abs() < 1e-12);
        assert!(m.explained_variance[1].abs() < 1e-12);
        let dot: f64 = m.components[0].iter().zip(&m.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn wide_data_uses_gram_route() {
        let rows = [[1.0f32, 2.0, 3.0, 4.0], [2.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 3.0]];
        let x = Matrix::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 3).unwrap();
        for (i, a) in m.components.iter().enumerate() {
            for (j, b) in m.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-9);
            }
        }
        assert!(m.explained_variance[2] < 1e-9);
        let proj = pca_project(&m, &x).unwrap();
        let var0: f64 = proj.iter().map(|c| c[0] * c[0]).sum::<f64>() / 2.0;
        assert!((var0 - m.explained_variance[0]).abs() < 1e-9 * var0);
    }

    #[test]
    fn mean_projects_to_origin() {
        let x = Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 5.0], [0.0, 1.0]]).unwrap();
        let m = pca_fit(&x, 2).unwrap();
        let mean = Matrix::from_rows(&[m.mean.iter().map(|&v| v as f32).collect::<Vec<_>>()]).unwrap();
        assert!(pca_project(&m, &mean).unwrap()[0].iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn k_bounds() {
        let x = Matrix::zeros(3, 2);
        assert!(matches!(pca_fit(&x, 3), Err(GeometryError::InvalidK { k: 3, max: 2 })));
        assert!(pca_fit(&x, 0).is_err());
    }
}
