//! Minimal-error approximator from a joint classifier over `(v, z, ε)`,
//! by an exchange (discretisation) scheme on `z`.

use serde::{Deserialize, Serialize};

use crate::domains::BoxDomain;
use crate::error::{Error, Result};
use crate::optim::{multistart_from, MinimizeOptions};
use crate::domains::SampleSet;
use crate::surrogates::{
    augment_balance, cap_per_class, svm_decision, svm_gradient, train_svm, CvReport, SvmClassifier, SvmGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SipConfig {
    pub max_iterations: usize,
    pub viol_tol: f64,
    pub penalty_weight: f64,
    /// Sobol starts of the outer problem, after the warm starts.
    pub n_starts: usize,
    /// Points per axis of the grid seeding the inner maximisation.
    pub inner_grid: usize,
    pub inner_starts: usize,
    /// Extra `(v, ε)` starting points for the outer problem.
    pub warm_starts: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for SipConfig {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            viol_tol: 1e-3,
            penalty_weight: 1e3,
            n_starts: 6,
            inner_grid: 9,
            inner_starts: 4,
            warm_starts: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SipResult {
    pub v_star: Vec<f64>,
    pub eps_star: f64,
    pub discretization_points: Vec<Vec<f64>>,
    pub iterations: usize,
    /// Largest classifier value over `z` found by the last inner search.
    pub max_violation: f64,
}

fn grid(b: &BoxDomain, per_axis: usize) -> Vec<Vec<f64>> {
    let d = b.dim();
    let mut out = vec![Vec::new()];
    for k in 0..d {
        let mut next = Vec::new();
        for p in &out {
            for s in 0..per_axis {
                let t = if per_axis == 1 { 0.5 } else { s as f64 / (per_axis - 1) as f64 };
                let mut q = p.clone();
                q.push(b.lo[k] + t * b.width(k));
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Exchange algorithm for `min ε s.t. Ḡ(v, z, ε) ≤ 0 for all z`. The
/// classifier sees `[v | z | ε]`.
pub fn sip_solve(
    clf: &SvmClassifier,
    v_box: &BoxDomain,
    z_box: &BoxDomain,
    eps_box: &BoxDomain,
    cfg: &SipConfig,
) -> Result<SipResult> {
    let (nv, nz) = (v_box.dim(), z_box.dim());
    if eps_box.dim() != 1 {
        return Err(Error::Dim { expected: 1, got: eps_box.dim() });
    }
    if clf.dim() != nv + nz + 1 {
        return Err(Error::Dim { expected: nv + nz + 1, got: clf.dim() });
    }
    let outer_box = crate::domains::box_product(&[v_box, eps_box]);
    let eps_w = eps_box.width(0).max(1e-12);
    let joint = |y: &[f64], z: &[f64]| {
        let mut x = Vec::with_capacity(nv + nz + 1);
        x.extend_from_slice(&y[..nv]);
        x.extend_from_slice(z);
        x.push(y[nv]);
        x
    };
    let mut points = grid(z_box, 3);
    let mut warm = cfg.warm_starts.clone();
    let opts = MinimizeOptions::default();
    let inner_seeds = grid(z_box, cfg.inner_grid.max(2));
    let mut iterations = 0;
    loop {
        iterations += 1;
        let pts = points.clone();
        let outer = move |y: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            g[nv] = 1.0 / eps_w;
            let mut f = (y[nv] - eps_box.lo[0]) / eps_w;
            let mut gx = vec![0.0; nv + nz + 1];
            for z in &pts {
                let val = svm_gradient(clf, &joint(y, z), &mut gx);
                if val > 0.0 {
                    f += cfg.penalty_weight * val * val;
                    let s = 2.0 * cfg.penalty_weight * val;
                    for k in 0..nv {
                        g[k] += s * gx[k];
                    }
                    g[nv] += s * gx[nv + nz];
                }
            }
            f
        };
        let r = multistart_from(&outer, &outer_box, &warm, cfg.n_starts, cfg.seed + iterations as u64, &opts);
        let y = r.x_star;
        let worst_listed =
            points.iter().map(|z| svm_decision(clf, &joint(&y, z))).fold(f64::NEG_INFINITY, f64::max);
        if worst_listed > cfg.viol_tol {
            return Err(Error::NoFeasibleApproximator);
        }
        // inner: most violated z for the current design
        let mut scored: Vec<(f64, Vec<f64>)> =
            inner_seeds.iter().map(|z| (svm_decision(clf, &joint(&y, z)), z.clone())).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let starts: Vec<Vec<f64>> = scored.iter().take(cfg.inner_starts).map(|s| s.1.clone()).collect();
        let yi = y.clone();
        let inner = move |z: &[f64], g: &mut [f64]| {
            let mut gx = vec![0.0; nv + nz + 1];
            let val = svm_gradient(clf, &joint(&yi, z), &mut gx);
            for k in 0..nz {
                g[k] = -gx[nv + k];
            }
            -val
        };
        let ri = multistart_from(&inner, z_box, &starts, 2, cfg.seed ^ 0xa5a5 ^ iterations as u64, &opts);
        let max_violation = -ri.f_star;
        let done = max_violation <= cfg.viol_tol || iterations >= cfg.max_iterations;
        if done {
            return Ok(SipResult {
                eps_star: y[nv],
                v_star: y[..nv].to_vec(),
                discretization_points: points,
                iterations,
                max_violation,
            });
        }
        points.push(ri.x_star);
        warm = std::iter::once(y).chain(cfg.warm_starts.iter().cloned()).collect();
    }
}

/// Classifier over joint samples `[v | z | ε]`, capped per class and
/// balanced before a cross-validated fit.
pub fn fit_joint_classifier(
    samples: &SampleSet,
    grid: &SvmGrid,
    per_class: usize,
    seed: u64,
) -> Result<(SvmClassifier, CvReport)> {
    let capped = cap_per_class(samples, per_class, seed);
    let balanced = augment_balance(&capped, 0.01, seed)?;
    train_svm(&balanced, grid, 2, seed)
}

/// `(v, ε)` of the feasible joint samples with the smallest `ε`.
pub fn smallest_error_starts(samples: &SampleSet, n_v: usize, k: usize) -> Vec<Vec<f64>> {
    let d = samples.dim();
    let mut rows: Vec<&[f64]> = samples.feasible_rows().collect();
    rows.sort_by(|a, b| a[d - 1].total_cmp(&b[d - 1]));
    rows.iter()
        .take(k)
        .map(|r| {
            let mut y = r[..n_v].to_vec();
            y.push(r[d - 1]);
            y
        })
        .collect()
}
