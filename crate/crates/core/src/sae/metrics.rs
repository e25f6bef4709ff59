use serde::Serialize;

use super::SaeError;

pub const DEFAULT_EPS: f64 = 1e-6;

/// Centroid comparison: Euclidean distance, cosine and active-set overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShiftMetrics {
    pub l2: f64,
    /// `None` when either vector has zero norm.
    pub cosine: Option<f64>,
    /// Intersection over union of `{i | f_i > eps}`.
    pub overlap: f64,
    /// Both active sets were empty; overlap is then reported as 1.
    pub both_empty: bool,
}

pub fn shift_metrics(fa: &[f64], fb: &[f64], eps: f64) -> Result<ShiftMetrics, SaeError> {
    if fa.len() != fb.len() {
        return Err(SaeError::DimensionMismatch { expected: fa.len(), got: fb.len() });
    }
    let (mut diff, mut dot, mut na, mut nb) = (0.0, 0.0, 0.0, 0.0);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in fa.iter().zip(fb) {
        diff += (a - b) * (a - b);
        dot += a * b;
        na += a * a;
        nb += b * b;
        let (ia, ib) = (a > eps, b > eps);
        inter += usize::from(ia && ib);
        union += usize::from(ia || ib);
    }
    let cosine = (na > 0.0 && nb > 0.0).then(|| (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0));
    let both_empty = union == 0;
    let overlap = if both_empty { 1.0 } else { inter as f64 / union as f64 };
    Ok(ShiftMetrics { l2: diff.sqrt(), cosine, overlap, both_empty })
}
