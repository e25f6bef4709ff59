use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{shift_metrics, ShiftMetrics, DEFAULT_EPS};
use super::model::{encode_rows, mean_of, SaeModel, SparseFeatures};
use super::SaeError;
use crate::corpus::Condition;
use crate::matrix::Matrix;
use crate::store::ActivationStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionPair {
    DecVsTruth,
    DecVsNeutral,
    TruthVsNeutral,
}

impl ConditionPair {
    pub const ALL: [ConditionPair; 3] = [ConditionPair::DecVsTruth, ConditionPair::DecVsNeutral, ConditionPair::TruthVsNeutral];

    pub fn conditions(self) -> (Condition, Condition) {
        match self {
            ConditionPair::DecVsTruth => (Condition::Deceptive, Condition::Truthful),
            ConditionPair::DecVsNeutral => (Condition::Deceptive, Condition::Neutral),
            ConditionPair::TruthVsNeutral => (Condition::Truthful, Condition::Neutral),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionPair::DecVsTruth => "dec_vs_truth",
            ConditionPair::DecVsNeutral => "dec_vs_neutral",
            ConditionPair::TruthVsNeutral => "truth_vs_neutral",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ConditionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown condition pair `{s}`"))
    }
}

/// Raw activations per layer and condition. Rows added for the same
/// (layer, condition) are stacked in insertion order.
#[derive(Debug, Clone, Default)]
pub struct ShiftInput {
    pub layers: BTreeMap<usize, BTreeMap<Condition, Matrix>>,
}

impl ShiftInput {
    pub fn add(&mut self, layer: usize, condition: Condition, x: &Matrix) -> Result<(), SaeError> {
        let slot = self.layers.entry(layer).or_default();
        match slot.get_mut(&condition) {
            None => {
                slot.insert(condition, x.clone());
            }
            Some(m) => {
                *m = Matrix::vstack([&*m, x])
                    .ok_or(SaeError::DimensionMismatch { expected: m.cols(), got: x.cols() })?;
            }
        }
        Ok(())
    }

    pub fn add_store(&mut self, store: &ActivationStore) -> Result<(), SaeError> {
        self.add(store.layer(), store.condition(), &store.matrix)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftConfig {
    pub pairs: Vec<ConditionPair>,
    pub eps: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { pairs: ConditionPair::ALL.to_vec(), eps: DEFAULT_EPS, resamples: 100, seed: 0 }
    }
}

/// Centroid metrics with bootstrap standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub layer: usize,
    pub pair: ConditionPair,
    pub metrics: ShiftMetrics,
    pub l2_sigma: f64,
    pub cosine_sigma: f64,
    pub overlap_sigma: f64,
    pub n: usize,
    pub resamples: usize,
}

/// Each row of the first condition against the second condition's centroid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerSampleRow {
    pub layer: usize,
    pub pair: ConditionPair,
    pub l2_mean: f64,
    pub l2_sd: f64,
    pub cosine_mean: f64,
    pub cosine_sd: f64,
    pub overlap_mean: f64,
    pub overlap_sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ShiftReport {
    pub rows: Vec<ShiftRow>,
    pub per_sample: Vec<PerSampleRow>,
    pub centroids: BTreeMap<usize, BTreeMap<Condition, Vec<f64>>>,
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NaN".into()
    }
}

impl ShiftReport {
    pub const CSV_HEADER: [&'static str; 10] =
        ["layer", "pair", "l2", "cosine", "overlap", "l2_sigma", "cosine_sigma", "overlap_sigma", "n", "resamples"];
    pub const PER_SAMPLE_HEADER: [&'static str; 9] =
        ["layer", "pair", "l2_mean", "l2_sd", "cosine_mean", "cosine_sd", "overlap_mean", "overlap_sd", "n"];

    /// An undefined cosine is written as `NaN`.
    pub fn write_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.layer.to_string(),
                r.pair.to_string(),
                num(r.metrics.l2),
                num(r.metrics.cosine.unwrap_or(f64::NAN)),
                num(r.metrics.overlap),
                num(r.l2_sigma),
                num(r.cosine_sigma),
                num(r.overlap_sigma),
                r.n.to_string(),
                r.resamples.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_per_sample_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::PER_SAMPLE_HEADER)?;
        for r in &self.per_sample {
            out.write_record([
                r.layer.to_string(),
                r.pair.to_string(),
                num(r.l2_mean),
                num(r.l2_sd),
                num(r.cosine_mean),
                num(r.cosine_sd),
                num(r.overlap_mean),
                num(r.overlap_sd),
                r.n.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn row(&self, layer: usize, pair: ConditionPair) -> Option<&ShiftRow> {
        self.rows.iter().find(|r| r.layer == layer && r.pair == pair)
    }
}

/// Sample standard deviation (n − 1) by Welford's update, exactly zero for
/// constant input; zero for fewer than two values.
pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in v.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    (m2 / (v.len() - 1) as f64).max(0.0).sqrt()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn resampled_mean(rows: &[SparseFeatures], width: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rows.len();
    let mut acc = vec![0.0; width];
    for _ in 0..n {
        rows[rng.gen_range(0..n)].add_to(&mut acc, 1.0);
    }
    acc.iter_mut().for_each(|v| *v /= n as f64);
    acc
}

fn bootstrap(
    a: &[SparseFeatures],
    b: &[SparseFeatures],
    width: usize,
    cfg: &ShiftConfig,
    stream: u64,
) -> Result<(f64, f64, f64), SaeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let (mut l2, mut cos, mut ov) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.resamples {
        let ma = resampled_mean(a, width, &mut rng);
        let mb = resampled_mean(b, width, &mut rng);
        let m = shift_metrics(&ma, &mb, cfg.eps)?;
        l2.push(m.l2);
        ov.push(m.overlap);
        cos.extend(m.cosine);
    }
    Ok((sample_sd(&l2), sample_sd(&cos), sample_sd(&ov)))
}

fn per_sample(a: &[SparseFeatures], centroid: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c_norm2: f64 = centroid.iter().map(|v| v * v).sum();
    let c_active: Vec<bool> = centroid.iter().map(|&v| v > eps).collect();
    let c_count = c_active.iter().filter(|&&x| x).count();
    let (mut l2, mut cos, mut ov) = (Vec::new(), Vec::new(), Vec::new());
    for f in a {
        let (mut dot, mut n2, mut inter, mut active) = (0.0, 0.0, 0usize, 0usize);
        for (&i, &v) in f.indices.iter().zip(&f.values) {
            let i = i as usize;
            dot += v * centroid[i];
            n2 += v * v;
            if v > eps {
                active += 1;
                inter += usize::from(c_active[i]);
            }
        }
        l2.push((n2 + c_norm2 - 2.0 * dot).max(0.0).sqrt());
        if n2 > 0.0 && c_norm2 > 0.0 {
            cos.push((dot / (n2.sqrt() * c_norm2.sqrt())).clamp(-1.0, 1.0));
        }
        let union = active + c_count - inter;
        ov.push(if union == 0 { 1.0 } else { inter as f64 / union as f64 });
    }
    (l2, cos, ov)
}

/// Centroid shift metrics for every layer and condition pair, with bootstrap
/// bands from `cfg.resamples` draws of rows with replacement within each
/// condition. The generator for (layer, pair) is seeded from `cfg.seed` on its
/// own stream, so results do not depend on scheduling.
pub fn layer_shift_sweep(
    input: &ShiftInput,
    saes: &BTreeMap<usize, SaeModel>,
    cfg: &ShiftConfig,
) -> Result<ShiftReport, SaeError> {
    let missing: Vec<usize> = input.layers.keys().copied().filter(|l| !saes.contains_key(l)).collect();
    if !missing.is_empty() {
        return Err(SaeError::MissingSae(missing));
    }
    if cfg.pairs.is_empty() {
        return Err(SaeError::Config("no condition pairs selected".into()));
    }
    let layers: Vec<(&usize, &BTreeMap<Condition, Matrix>)> = input.layers.iter().collect();
    let results = layers
        .par_iter()
        .map(|&(&layer, conds)| shift_layer(layer, conds, &saes[&layer], cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = ShiftReport::default();
    for (layer, (rows, per, centroids)) in layers.iter().map(|(l, _)| **l).zip(results) {
        report.rows.extend(rows);
        report.per_sample.extend(per);
        report.centroids.insert(layer, centroids);
    }
    Ok(report)
}

type LayerOutput = (Vec<ShiftRow>, Vec<PerSampleRow>, BTreeMap<Condition, Vec<f64>>);

fn shift_layer(layer: usize, conds: &BTreeMap<Condition, Matrix>, sae: &SaeModel, cfg: &ShiftConfig) -> Result<LayerOutput, SaeError> {
    let mut encoded: BTreeMap<Condition, Vec<SparseFeatures>> = BTreeMap::new();
    let mut centroids = BTreeMap::new();
    for pair in &cfg.pairs {
        let (a, b) = pair.conditions();
        for c in [a, b] {
            if encoded.contains_key(&c) {
                continue;
            }
            let x = conds
                .get(&c)
                .ok_or_else(|| SaeError::Config(format!("layer {layer} has no `{c}` activations")))?;
            if x.rows() == 0 {
                return Err(SaeError::Empty(format!("layer {layer}, condition {c}")));
            }
            let rows = encode_rows(sae, x)?;
            centroids.insert(c, mean_of(&rows, sae.width()));
            encoded.insert(c, rows);
        }
    }
    let mut out = Vec::new();
    let mut per = Vec::new();
    for &pair in &cfg.pairs {
        let (ca, cb) = pair.conditions();
        let (a, b) = (&encoded[&ca], &encoded[&cb]);
        if a.len() != b.len() {
            return Err(SaeError::Config(format!(
                "layer {layer}: {ca} has {} rows but {cb} has {}",
                a.len(),
                b.len()
            )));
        }
        let metrics = shift_metrics(&centroids[&ca], &centroids[&cb], cfg.eps)?;
        let stream = layer as u64 * 4 + pair.index();
        let (l2_sigma, cosine_sigma, overlap_sigma) = bootstrap(a, b, sae.width(), cfg, stream)?;
        out.push(ShiftRow {
            layer,
            pair,
            metrics,
            l2_sigma,
            cosine_sigma,
            overlap_sigma,
            n: a.len(),
            resamples: cfg.resamples,
        });
        let (l2, cos, ov) = per_sample(a, &centroids[&cb], cfg.eps);
        per.push(PerSampleRow {
            layer,
            pair,
            l2_mean: mean(&l2),
            l2_sd: sample_sd(&l2),
            cosine_mean: mean(&cos),
            cosine_sd: sample_sd(&cos),
            overlap_mean: mean(&ov),
            overlap_sd: sample_sd(&ov),
            n: a.len(),
        });
    }
    Ok((out, per, centroids))
}
