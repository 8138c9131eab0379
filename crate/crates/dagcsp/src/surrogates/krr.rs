//! Kernel ridge regression with an RBF kernel.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fold_assignment, rbf, CvReport, KrrGrid, Scaling};
use crate::error::{Error, Result};

const LAMBDA_FLOOR: f64 = 1e-10;

/// `predict(x) = mean + std ∘ Σ_k W_k exp(−γ‖s(x) − x_k‖²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrRegressor {
    pub train_inputs: Vec<Vec<f64>>,
    /// One row of output weights per training input.
    pub dual_weights: Vec<Vec<f64>>,
    pub rbf_gamma: f64,
    pub ridge_lambda: f64,
    pub output_dim: usize,
    pub scaling: Scaling,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl KrrRegressor {
    pub fn input_dim(&self) -> usize {
        self.scaling.offset.len()
    }

    /// Solve `(K + λI) W = Y` on all rows with fixed hyperparameters.
    pub fn fit(inputs: &[Vec<f64>], outputs: &[Vec<f64>], rbf_gamma: f64, ridge_lambda: f64) -> Result<Self> {
        let n = inputs.len();
        if n == 0 || outputs.len() != n {
            return Err(Error::Dim { expected: n, got: outputs.len() });
        }
        let d = inputs[0].len();
        let m = outputs[0].len();
        let scaling = Scaling::fit(inputs.iter().map(|r| r.as_slice()), d);
        let (out_mean, out_std) = column_stats(outputs, m);
        let x: Vec<Vec<f64>> = inputs
            .iter()
            .map(|r| {
                let mut s = vec![0.0; d];
                scaling.apply(r, &mut s);
                s
            })
            .collect();
        let lambda = ridge_lambda.max(LAMBDA_FLOOR);
        let mut kmat = DMatrix::<f64>::from_fn(n, n, |i, j| rbf(rbf_gamma, &x[i], &x[j]));
        for i in 0..n {
            kmat[(i, i)] += lambda;
        }
        let chol = kmat.cholesky().ok_or(Error::SingularKernel)?;
        let y = DMatrix::<f64>::from_fn(n, m, |i, o| (outputs[i][o] - out_mean[o]) / out_std[o]);
        let w = chol.solve(&y);
        let dual_weights = (0..n).map(|i| (0..m).map(|o| w[(i, o)]).collect()).collect();
        Ok(Self {
            train_inputs: x,
            dual_weights,
            rbf_gamma,
            ridge_lambda: lambda,
            output_dim: m,
            scaling,
            out_mean,
            out_std,
        })
    }

    /// Mean squared error in standardised output units.
    pub fn standardized_mse(&self, inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> f64 {
        let mut tot = 0.0;
        for (x, y) in inputs.iter().zip(outputs) {
            let p = krr_predict(self, x);
            for o in 0..self.output_dim {
                tot += ((p[o] - y[o]) / self.out_std[o]).powi(2);
            }
        }
        tot / (inputs.len().max(1) * self.output_dim.max(1)) as f64
    }
}

fn column_stats(rows: &[Vec<f64>], m: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..m).map(|o| rows.iter().map(|r| r[o]).sum::<f64>() / n).collect();
    let std = (0..m)
        .map(|o| {
            let v = rows.iter().map(|r| (r[o] - mean[o]).powi(2)).sum::<f64>() / n;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

pub fn krr_predict(r: &KrrRegressor, x: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; x.len()];
    r.scaling.apply(x, &mut s);
    let mut out = vec![0.0; r.output_dim];
    for (xi, w) in r.train_inputs.iter().zip(&r.dual_weights) {
        let k = rbf(r.rbf_gamma, &s, xi);
        for o in 0..r.output_dim {
            out[o] += w[o] * k;
        }
    }
    for o in 0..r.output_dim {
        out[o] = r.out_mean[o] + r.out_std[o] * out[o];
    }
    out
}

/// Prediction and its Jacobian (row-major, `output_dim × input_dim`).
pub fn krr_jacobian(r: &KrrRegressor, x: &[f64], jac: &mut [f64]) -> Vec<f64> {
    let d = x.len();
    let mut s = vec![0.0; d];
    r.scaling.apply(x, &mut s);
    let mut out = vec![0.0; r.output_dim];
    jac.iter_mut().for_each(|v| *v = 0.0);
    for (xi, w) in r.train_inputs.iter().zip(&r.dual_weights) {
        let k = rbf(r.rbf_gamma, &s, xi);
        for o in 0..r.output_dim {
            let wk = w[o] * k;
            out[o] += wk;
            for c in 0..d {
                jac[o * d + c] += -2.0 * r.rbf_gamma * (s[c] - xi[c]) * wk;
            }
        }
    }
    for o in 0..r.output_dim {
        out[o] = r.out_mean[o] + r.out_std[o] * out[o];
        for c in 0..d {
            jac[o * d + c] *= r.out_std[o] / r.scaling.scale[c];
        }
    }
    out
}

/// Grid search on mean fold MSE (standardised outputs), then refit on all data.
pub fn train_krr(
    inputs: &[Vec<f64>],
    outputs: &[Vec<f64>],
    grid: &KrrGrid,
    k_folds: usize,
    seed: u64,
) -> Result<(KrrRegressor, CvReport)> {
    let k_folds = k_folds.max(2);
    if inputs.len() < 2 * k_folds {
        return Err(Error::Dim { expected: 2 * k_folds, got: inputs.len() });
    }
    let m = outputs[0].len();
    let (_, std) = column_stats(outputs, m);
    let folds = fold_assignment(inputs.len(), k_folds, None, seed);
    let mut combos = Vec::new();
    for &g in &grid.rbf_gamma {
        for &l in &grid.ridge_lambda {
            combos.push((g, l));
        }
    }
    let pick = |f: usize, inside: bool| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let idx: Vec<usize> = (0..inputs.len()).filter(|&i| (folds[i] == f) != inside).collect();
        (idx.iter().map(|&i| inputs[i].clone()).collect(), idx.iter().map(|&i| outputs[i].clone()).collect())
    };
    let jobs: Vec<(usize, usize)> = (0..combos.len()).flat_map(|c| (0..k_folds).map(move |f| (c, f))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(ci, f)| {
            let (g, l) = combos[ci];
            let (xi, yi) = pick(f, true);
            let (xt, yt) = pick(f, false);
            match KrrRegressor::fit(&xi, &yi, g, l) {
                Ok(model) => {
                    let mut tot = 0.0;
                    for (x, y) in xt.iter().zip(&yt) {
                        let p = krr_predict(&model, x);
                        for o in 0..m {
                            tot += ((p[o] - y[o]) / std[o]).powi(2);
                        }
                    }
                    tot / (xt.len().max(1) * m) as f64
                }
                Err(_) => f64::INFINITY,
            }
        })
        .collect();
    let mut best = 0;
    let mut best_mean = f64::INFINITY;
    for ci in 0..combos.len() {
        let mean = scores[ci * k_folds..(ci + 1) * k_folds].iter().sum::<f64>() / k_folds as f64;
        if mean < best_mean {
            best_mean = mean;
            best = ci;
        }
    }
    let (g, l) = combos[best];
    let model = KrrRegressor::fit(inputs, outputs, g, l)?;
    let report = CvReport {
        metric: "mse".into(),
        fold_scores: scores[best * k_folds..(best + 1) * k_folds].to_vec(),
        chosen_hypers: BTreeMap::from([("rbf_gamma".to_string(), g), ("ridge_lambda".to_string(), l)]),
        final_train_metric: model.standardized_mse(inputs, outputs),
        converged: true,
    };
    Ok((model, report))
}
