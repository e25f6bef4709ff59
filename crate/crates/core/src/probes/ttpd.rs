use std::collections::BTreeMap;

use super::{check_rows, ProbeError, ProbeTag};
use crate::corpus::Polarity;
use crate::matrix::{norm, Matrix};

/// One training dataset: its activations, truth labels and polarity.
#[derive(Debug, Clone, Copy)]
pub struct TtpdGroup<'a> {
    pub dataset_id: &'a str,
    pub x: &'a Matrix,
    pub labels: &'a [bool],
    pub polarity: Polarity,
}

/// General truth direction `t_G` and polarity-sensitive direction `t_P`,
/// both unit length, with the fitted magnitudes kept in `g_scale`/`p_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TtpdProbe {
    pub t_g: Vec<f64>,
    pub t_p: Vec<f64>,
    pub g_scale: f64,
    pub p_scale: f64,
    pub threshold: f64,
    pub dataset_means: BTreeMap<String, Vec<f64>>,
    pub global_mean: Vec<f64>,
    pub tag: Option<ProbeTag>,
}

#[derive(Debug, Clone)]
pub struct TtpdFit {
    pub probe: TtpdProbe,
    /// Every group shared one polarity, so `t_P` is unidentifiable and set to zero.
    pub polarity_degenerate: bool,
    /// The fitted general direction is exactly zero.
    pub general_degenerate: bool,
}

/// How test rows are centred before projecting onto `t_G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Centering {
    GlobalTrainMean,
    DatasetMean(String),
}

impl TtpdProbe {
    pub fn dim(&self) -> usize {
        self.t_g.len()
    }

    /// Noise-free model activation `μ_i + τ t_G + τ p t_P` with magnitudes restored.
    pub fn reconstruct(&self, dataset_id: &str, label: bool, polarity: Polarity) -> Option<Vec<f64>> {
        let mu = self.dataset_means.get(dataset_id)?;
        let tau = if label { 1.0 } else { -1.0 };
        let p = polarity.sign();
        Some(
            mu.iter()
                .zip(&self.t_g)
                .zip(&self.t_p)
                .map(|((m, g), q)| m + tau * self.g_scale * g + tau * p * self.p_scale * q)
                .collect(),
        )
    }

    /// Projections of centred rows onto `t_G`.
    pub fn project(&self, x: &Matrix, centering: &Centering) -> Result<Vec<f64>, ProbeError> {
        if x.cols() != self.dim() {
            return Err(ProbeError::DimensionMismatch { expected: self.dim(), got: x.cols() });
        }
        let mu = match centering {
            Centering::GlobalTrainMean => &self.global_mean,
            Centering::DatasetMean(id) => self.dataset_means.get(id).ok_or_else(|| {
                ProbeError::Config(format!("no training mean for dataset `{id}`"))
            })?,
        };
        Ok(x.iter_rows().map(|r| centred_dot(r, mu, &self.t_g)).collect())
    }
}

fn centred_dot(row: &[f32], mu: &[f64], dir: &[f64]) -> f64 {
    row.iter().zip(mu).zip(dir).map(|((&v, m), d)| (f64::from(v) - m) * d).sum()
}

/// Fits `x_ij ≈ μ_i + τ_ij t_G + τ_ij p_i t_P` by least squares, where `μ_i`
/// is the row mean of dataset `i`, `τ = ±1` the truth label and `p = ±1` the
/// polarity. The solution per coordinate comes from the 2×2 normal equations.
pub fn fit_ttpd(groups: &[TtpdGroup<'_>]) -> Result<TtpdFit, ProbeError> {
    let Some(first) = groups.first() else {
        return Err(ProbeError::TooFewRows { min: 1, got: 0 });
    };
    let d = first.x.cols();
    let mut dataset_means = BTreeMap::new();
    let mut a = vec![0.0f64; d];
    let mut b = vec![0.0f64; d];
    let mut total = vec![0.0f64; d];
    let (mut n, mut p_sum) = (0.0f64, 0.0f64);
    let (mut any_true, mut any_false) = (false, false);
    for g in groups {
        if g.x.cols() != d {
            return Err(ProbeError::DimensionMismatch { expected: d, got: g.x.cols() });
        }
        check_rows(g.x, g.labels.len())?;
        if g.x.rows() == 0 {
            return Err(ProbeError::TooFewRows { min: 1, got: 0 });
        }
        if dataset_means.contains_key(g.dataset_id) {
            return Err(ProbeError::Config(format!("dataset `{}` given twice", g.dataset_id)));
        }
        let mu = g.x.column_means();
        let p = g.polarity.sign();
        for (row, &label) in g.x.iter_rows().zip(g.labels) {
            let tau = if label { 1.0 } else { -1.0 };
            any_true |= label;
            any_false |= !label;
            for j in 0..d {
                let v = f64::from(row[j]);
                let c = v - mu[j];
                a[j] += tau * c;
                b[j] += tau * p * c;
                total[j] += v;
            }
            n += 1.0;
            p_sum += p;
        }
        dataset_means.insert(g.dataset_id.to_string(), mu);
    }
    if !(any_true && any_false) {
        return Err(ProbeError::DegenerateLabels);
    }

    let det = n * n - p_sum * p_sum;
    let polarity_degenerate = det.abs() <= 1e-9 * n * n;
    let (mut t_g, mut t_p): (Vec<f64>, Vec<f64>) = if polarity_degenerate {
        (a.iter().map(|v| v / n).collect(), vec![0.0; d])
    } else {
        (
            a.iter().zip(&b).map(|(a, b)| (n * a - p_sum * b) / det).collect(),
            a.iter().zip(&b).map(|(a, b)| (n * b - p_sum * a) / det).collect(),
        )
    };
    let g_scale = norm(&t_g);
    let p_scale = norm(&t_p);
    let general_degenerate = g_scale == 0.0;
    if g_scale > 0.0 {
        t_g.iter_mut().for_each(|v| *v /= g_scale);
    }
    if p_scale > 0.0 {
        t_p.iter_mut().for_each(|v| *v /= p_scale);
    }

    // Midpoint between class-conditional mean projections of centred training rows.
    let (mut sum_t, mut n_t, mut sum_f, mut n_f) = (0.0, 0usize, 0.0, 0usize);
    for g in groups {
        let mu = &dataset_means[g.dataset_id];
        for (row, &label) in g.x.iter_rows().zip(g.labels) {
            let s = centred_dot(row, mu, &t_g);
            if label {
                sum_t += s;
                n_t += 1;
            } else {
                sum_f += s;
                n_f += 1;
            }
        }
    }
    let threshold = 0.5 * (sum_t / n_t as f64 + sum_f / n_f as f64);
    let global_mean = total.into_iter().map(|v| v / n).collect();

    Ok(TtpdFit {
        probe: TtpdProbe {
            t_g,
            t_p,
            g_scale,
            p_scale,
            threshold,
            dataset_means,
            global_mean,
            tag: None,
        },
        polarity_degenerate,
        general_degenerate,
    })
}

/// True when the centred projection onto `t_G` exceeds the threshold.
pub fn classify_ttpd(probe: &TtpdProbe, x: &Matrix, centering: &Centering) -> Result<Vec<bool>, ProbeError> {
    Ok(probe
        .project(x, centering)?
        .into_iter()
        .map(|s| s > probe.threshold)
        .collect())
}
