use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{check_rows, ProbeError, ProbeTag};
use crate::matrix::Matrix;

/// Per-column z-scoring fitted on training rows. Constant columns get scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let mean = x.column_means();
        let mut var = vec![0.0f64; x.cols()];
        for r in x.iter_rows() {
            for ((v, &m), &xi) in var.iter_mut().zip(&mean).zip(r) {
                let d = f64::from(xi) - m;
                *v += d * d;
            }
        }
        let n = x.rows().max(1) as f64;
        let scale = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply_into(&self, row: &[f32], out: &mut [f32]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = ((f64::from(v) - m) / s) as f32;
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            self.apply_into(x.row(i), out.row_mut(i));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrConfig {
    /// ℓ2 strength on the weights (the bias is not penalised).
    pub reg: f64,
    /// Stop once the gradient's ∞-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self { reg: 1e-3, tol: 1e-6, max_iter: 1000 }
    }
}

/// Logistic-regression probe `σ(w·z + b)` over standardized activations `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrProbe {
    pub standardizer: Standardizer,
    pub w: Vec<f64>,
    pub b: f64,
    pub tag: Option<ProbeTag>,
}

impl LrProbe {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Weights and bias expressed on raw (unstandardized) activations.
    pub fn raw_weights(&self) -> (Vec<f64>, f64) {
        let s = &self.standardizer;
        let w: Vec<f64> = self.w.iter().zip(&s.scale).map(|(w, sc)| w / sc).collect();
        let b = self.b - w.iter().zip(&s.mean).map(|(w, m)| w * m).sum::<f64>();
        (w, b)
    }

    fn logit(&self, row: &[f32]) -> f64 {
        let s = &self.standardizer;
        let mut acc = self.b;
        for (((&v, &m), &sc), &w) in row.iter().zip(&s.mean).zip(&s.scale).zip(&self.w) {
            acc += w * (f64::from(v) - m) / sc;
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct LrFit {
    pub probe: LrProbe,
    pub converged: bool,
    pub iterations: usize,
    /// Objective at the start and after every accepted step.
    pub loss_history: Vec<f64>,
}

pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

struct Objective<'a> {
    z: &'a Matrix,
    y: Vec<f64>,
    reg: f64,
}

impl Objective<'_> {
    /// Loss and gradient at `theta = [w.., b]`.
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.z.cols();
        let n = self.z.rows() as f64;
        let (w, b) = (&theta[..d], theta[d]);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (row, &y) in self.z.iter_rows().zip(&self.y) {
            let s = b + w.iter().zip(row).map(|(&w, &z)| w * f64::from(z)).sum::<f64>();
            loss += softplus(s) - y * s;
            let r = sigmoid(s) - y;
            for (g, &z) in grad[..d].iter_mut().zip(row) {
                *g += r * f64::from(z);
            }
            grad[d] += r;
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        let mut penalty = 0.0;
        for (g, &w) in grad[..d].iter_mut().zip(w) {
            *g += self.reg * w;
            penalty += w * w;
        }
        loss + 0.5 * self.reg * penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const HISTORY: usize = 10;
const ARMIJO: f64 = 1e-4;

/// Fits the standardizer, then minimizes mean logistic loss + (reg/2)‖w‖²
/// with L-BFGS and a backtracking Armijo line search from `w = 0, b = 0`.
/// Only steps that decrease the objective are accepted.
pub fn train_lr(x: &Matrix, y: &[bool], cfg: &LrConfig) -> Result<LrFit, ProbeError> {
    check_rows(x, y.len())?;
    if x.rows() < 2 {
        return Err(ProbeError::TooFewRows { min: 2, got: x.rows() });
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(ProbeError::DegenerateLabels);
    }
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let obj = Objective {
        z: &z,
        y: y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        reg: cfg.reg,
    };

    let p = x.cols() + 1;
    let mut theta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut loss = obj.eval(&theta, &mut grad);
    let mut history = vec![loss];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = inf_norm(&grad) < cfg.tol;
    let mut iterations = 0;
    let mut trial = vec![0.0; p];
    let mut trial_grad = vec![0.0; p];

    while !converged && iterations < cfg.max_iter {
        iterations += 1;
        // Two-loop recursion for the quasi-Newton direction.
        let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, yv, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(yv).for_each(|(d, y)| *d -= a * y);
            alphas.push(a);
        }
        let gamma = pairs.back().map_or_else(
            || 1.0 / inf_norm(&grad).max(1.0),
            |(s, yv, _)| dot(s, yv) / dot(yv, yv),
        );
        dir.iter_mut().for_each(|d| *d *= gamma);
        for ((s, yv, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(yv, &dir);
            dir.iter_mut().zip(s).for_each(|(d, s)| *d += (a - b) * s);
        }
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            pairs.clear();
            dir = grad.iter().map(|g| -g / inf_norm(&grad).max(1.0)).collect();
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-16 {
            for ((t, &th), &d) in trial.iter_mut().zip(&theta).zip(&dir) {
                *t = th + step * d;
            }
            let f = obj.eval(&trial, &mut trial_grad);
            if f <= loss + ARMIJO * step * slope && f <= loss {
                accepted = Some(f);
                break;
            }
            step *= 0.5;
        }
        let Some(f) = accepted else { break };

        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&yv, &yv).max(f64::MIN_POSITIVE) {
            if pairs.len() == HISTORY {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        loss = f;
        history.push(loss);
        converged = inf_norm(&grad) < cfg.tol;
    }

    let b = theta.pop().expect("bias present");
    Ok(LrFit {
        probe: LrProbe { standardizer, w: theta, b, tag: None },
        converged,
        iterations,
        loss_history: history,
    })
}

/// Probabilities `p = σ(w·z + b)` and labels `p > 0.5` (exact ties are false).
pub fn predict_lr(probe: &LrProbe, x: &Matrix) -> Result<(Vec<f64>, Vec<bool>), ProbeError> {
    if x.cols() != probe.dim() {
        return Err(ProbeError::DimensionMismatch { expected: probe.dim(), got: x.cols() });
    }
    let probs: Vec<f64> = x.iter_rows().map(|r| sigmoid(probe.logit(r))).collect();
    let labels = probs.iter().map(|&p| p > 0.5).collect();
    Ok((probs, labels))
}
