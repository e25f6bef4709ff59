use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::SaeModel;
use super::SaeError;
use crate::corpus::Condition;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedFeature {
    pub feature_id: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub abs_delta: f64,
}

fn by_delta(x: &RankedFeature, y: &RankedFeature) -> Ordering {
    y.abs_delta.total_cmp(&x.abs_delta).then(x.feature_id.cmp(&y.feature_id))
}

/// The `k` features with the largest `|f̄_b,i − f̄_a,i|`, ties by ascending id.
pub fn top_k_features(fa: &[f64], fb: &[f64], k: usize) -> Result<Vec<RankedFeature>, SaeError> {
    if fa.len() != fb.len() {
        return Err(SaeError::DimensionMismatch { expected: fa.len(), got: fb.len() });
    }
    if k == 0 || k > fa.len() {
        return Err(SaeError::Config(format!("k must be in 1..={}, got {k}", fa.len())));
    }
    let mut all: Vec<RankedFeature> = fa
        .iter()
        .zip(fb)
        .enumerate()
        .map(|(i, (&a, &b))| RankedFeature { feature_id: i, mean_a: a, mean_b: b, abs_delta: (b - a).abs() })
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, by_delta);
        all.truncate(k);
    }
    all.sort_unstable_by(by_delta);
    Ok(all)
}

/// Per-layer truthful-versus-deceptive rankings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureRanking {
    pub layers: BTreeMap<usize, Vec<RankedFeature>>,
}

impl FeatureRanking {
    pub const CSV_HEADER: [&'static str; 5] = ["layer", "feature_id", "mean_truthful", "mean_deceptive", "abs_delta"];

    /// Ranks from centroids keyed by layer then condition.
    pub fn from_centroids(
        centroids: &BTreeMap<usize, BTreeMap<Condition, Vec<f64>>>,
        k: usize,
    ) -> Result<Self, SaeError> {
        let mut layers = BTreeMap::new();
        for (&layer, conds) in centroids {
            let get = |c: Condition| {
                conds.get(&c).ok_or_else(|| SaeError::Config(format!("layer {layer} lacks a `{c}` centroid")))
            };
            layers.insert(layer, top_k_features(get(Condition::Truthful)?, get(Condition::Deceptive)?, k)?);
        }
        Ok(Self { layers })
    }

    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for (layer, rows) in &self.layers {
            for r in rows {
                out.write_record([
                    layer.to_string(),
                    r.feature_id.to_string(),
                    r.mean_a.to_string(),
                    r.mean_b.to_string(),
                    r.abs_delta.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Raw data behind one violin: a feature's value on every row of a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinRecord {
    pub feature_id: usize,
    pub layer: usize,
    pub condition: Condition,
    pub values: Vec<f64>,
}

/// Activation of each requested feature on every row, per condition, in row order.
pub fn feature_distributions(
    sae: &SaeModel,
    per_condition: &BTreeMap<Condition, Matrix>,
    feature_ids: &[usize],
) -> Result<Vec<ViolinRecord>, SaeError> {
    if let Some(&bad) = feature_ids.iter().find(|&&i| i >= sae.width()) {
        return Err(SaeError::IndexOutOfRange { index: bad, width: sae.width() });
    }
    let mut out = Vec::new();
    for (&condition, x) in per_condition {
        if x.cols() != sae.d() {
            return Err(SaeError::DimensionMismatch { expected: sae.d(), got: x.cols() });
        }
        if let Some((row, col)) = x.first_non_finite() {
            return Err(SaeError::NonFinite { row, col });
        }
        for &feature_id in feature_ids {
            let values = (0..x.rows()).into_par_iter().map(|r| sae.activation(x.row(r), feature_id)).collect();
            out.push(ViolinRecord { feature_id, layer: sae.layer(), condition, values });
        }
    }
    Ok(out)
}
