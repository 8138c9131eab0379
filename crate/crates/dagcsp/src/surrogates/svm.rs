//! Soft-margin RBF support vector classifier trained by SMO.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fold_assignment, rbf, CvReport, Scaling, SvmGrid};
use crate::domains::{SampleSet, FEASIBLE, INFEASIBLE};
use crate::error::{Error, Result};

const SMO_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
/// Iteration limit per training point.
const PASS_FACTOR: usize = 10;

/// `decision(x) = Σ coef_k exp(−γ‖s(x) − x_k‖²) + bias` with `s` the
/// internal scaling onto the training box. `decision ≤ 0` means feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmClassifier {
    pub support_points: Vec<Vec<f64>>,
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub rbf_gamma: f64,
    pub reg_c: f64,
    pub scaling: Scaling,
    pub converged: bool,
}

impl SvmClassifier {
    /// Model that is the constant `bias` everywhere.
    pub fn constant(dim: usize, bias: f64) -> Self {
        Self {
            support_points: vec![vec![0.0; dim]],
            dual_coefs: vec![0.0],
            bias,
            rbf_gamma: 1.0,
            reg_c: 1.0,
            scaling: Scaling::identity(dim),
            converged: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.scaling.offset.len()
    }

    /// Train with fixed hyperparameters on all rows of `data`.
    pub fn fit(data: &SampleSet, reg_c: f64, rbf_gamma: f64) -> Result<Self> {
        let n_f = data.n_feasible();
        if n_f == 0 || n_f == data.len() {
            return Err(Error::SingleClassDataset);
        }
        let scaling = Scaling::fit(data.rows(), data.dim());
        let pts: Vec<Vec<f64>> = data
            .rows()
            .map(|r| {
                let mut s = vec![0.0; r.len()];
                scaling.apply(r, &mut s);
                s
            })
            .collect();
        let y: Vec<f64> = data.labels.iter().map(|&l| l as f64).collect();
        let (alpha, rho, converged) = smo(&pts, &y, reg_c, rbf_gamma);
        let mut support_points = Vec::new();
        let mut dual_coefs = Vec::new();
        for k in 0..pts.len() {
            if alpha[k] > 0.0 {
                support_points.push(pts[k].clone());
                dual_coefs.push(alpha[k] * y[k]);
            }
        }
        if support_points.is_empty() {
            support_points.push(vec![0.0; data.dim()]);
            dual_coefs.push(0.0);
        }
        if !converged {
            log::warn!("SMO hit its iteration limit (C={reg_c}, gamma={rbf_gamma}); keeping best-so-far");
        }
        Ok(Self { support_points, dual_coefs, bias: -rho, rbf_gamma, reg_c, scaling, converged })
    }

    /// Fraction of rows whose predicted label matches.
    pub fn accuracy(&self, data: &SampleSet) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let hits = (0..data.len())
            .filter(|&k| {
                let pred = if svm_decision(self, data.row(k)) <= 0.0 { FEASIBLE } else { INFEASIBLE };
                pred == data.labels[k]
            })
            .count();
        hits as f64 / data.len() as f64
    }
}

pub fn svm_decision(m: &SvmClassifier, x: &[f64]) -> f64 {
    let mut s = vec![0.0; x.len()];
    m.scaling.apply(x, &mut s);
    let mut v = m.bias;
    for (sv, c) in m.support_points.iter().zip(&m.dual_coefs) {
        if *c != 0.0 {
            v += c * rbf(m.rbf_gamma, &s, sv);
        }
    }
    v
}

/// Decision value and its gradient with respect to `x`.
pub fn svm_gradient(m: &SvmClassifier, x: &[f64], grad: &mut [f64]) -> f64 {
    let d = x.len();
    let mut s = vec![0.0; d];
    m.scaling.apply(x, &mut s);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut v = m.bias;
    for (sv, c) in m.support_points.iter().zip(&m.dual_coefs) {
        if *c == 0.0 {
            continue;
        }
        let e = c * rbf(m.rbf_gamma, &s, sv);
        v += e;
        for k in 0..d {
            grad[k] += -2.0 * m.rbf_gamma * (s[k] - sv[k]) * e;
        }
    }
    for k in 0..d {
        grad[k] /= m.scaling.scale[k];
    }
    v
}

/// Dual solve with second-order working-set selection. Returns
/// `(alpha, rho, converged)`; the decision function is `Σ α_k y_k K − rho`.
fn smo(x: &[Vec<f64>], y: &[f64], c: f64, gamma: f64) -> (Vec<f64>, f64, bool) {
    let n = x.len();
    let kmat: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| rbf(gamma, &x[ij / n], &x[ij % n]))
        .collect();
    let k = |i: usize, j: usize| kmat[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut g = vec![-1.0; n];
    let max_iter = PASS_FACTOR * n.max(100);
    let mut converged = false;
    for _ in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            if up && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            let low = (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);
            if !low {
                continue;
            }
            let yg = y[t] * g[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            let b = gmax + yg;
            if b > 0.0 {
                let mut a = k(i, i) + k(t, t) - 2.0 * k(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let o = -(b * b) / a;
                if o <= obj_min {
                    obj_min = o;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < SMO_TOL || j == usize::MAX {
            converged = true;
            break;
        }
        let (ai, aj) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k(i, j);
        if y[i] != y[j] {
            let quad = (k(i, i) + k(j, j) + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - ai, alpha[j] - aj);
        for t in 0..n {
            g[t] += y[t] * (y[i] * k(i, t) * dai + y[j] * k(j, t) * daj);
        }
    }

    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut nfree = 0usize;
    let mut sum_free = 0.0;
    for t in 0..n {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nfree += 1;
            sum_free += yg;
        }
    }
    let rho = if nfree > 0 { sum_free / nfree as f64 } else { 0.5 * (ub + lb) };
    (alpha, rho, converged)
}

/// Grid search by `k_folds` cross-validation, then refit on all data.
pub fn train_svm(data: &SampleSet, grid: &SvmGrid, k_folds: usize, seed: u64) -> Result<(SvmClassifier, CvReport)> {
    let n_f = data.n_feasible();
    if n_f == 0 || n_f == data.len() {
        return Err(Error::SingleClassDataset);
    }
    if grid.reg_c.is_empty() || grid.rbf_gamma.is_empty() {
        return Err(Error::InvalidSamplerConfig("empty SVM hyperparameter grid".into()));
    }
    let k_folds = k_folds.max(2);
    let folds = fold_assignment(data.len(), k_folds, Some(&data.labels), seed);
    let split = |f: usize| {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        (data.subset(&train), data.subset(&test))
    };
    let splits: Vec<(SampleSet, SampleSet)> = (0..k_folds).map(split).collect();
    let mut combos = Vec::new();
    for &c in &grid.reg_c {
        for &g in &grid.rbf_gamma {
            combos.push((c, g));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..combos.len()).flat_map(|c| (0..k_folds).map(move |f| (c, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(ci, f)| {
            let (tr, te) = &splits[f];
            let (c, g) = combos[ci];
            match SvmClassifier::fit(tr, c, g) {
                Ok(m) => m.accuracy(te),
                Err(_) => {
                    // one class only in this fold: predict it everywhere
                    let only = tr.labels[0];
                    te.labels.iter().filter(|&&l| l == only).count() as f64 / te.len().max(1) as f64
                }
            }
        })
        .collect();
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for ci in 0..combos.len() {
        let mean = scores[ci * k_folds..(ci + 1) * k_folds].iter().sum::<f64>() / k_folds as f64;
        let (c, g) = combos[ci];
        let (bc, bg) = combos[best];
        let tie_better = (c, g) < (bc, bg);
        if mean > best_mean + 1e-12 || ((mean - best_mean).abs() <= 1e-12 && tie_better) {
            best_mean = mean;
            best = ci;
        }
    }
    let (c, g) = combos[best];
    let model = SvmClassifier::fit(data, c, g)?;
    let report = CvReport {
        metric: "accuracy".into(),
        fold_scores: scores[best * k_folds..(best + 1) * k_folds].to_vec(),
        chosen_hypers: BTreeMap::from([("reg_c".to_string(), c), ("rbf_gamma".to_string(), g)]),
        final_train_metric: model.accuracy(data),
        converged: model.converged,
    };
    Ok((model, report))
}
