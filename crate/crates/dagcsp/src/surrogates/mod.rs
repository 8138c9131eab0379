//! Feasibility classifiers and input-output regressors used to couple
//! neighbouring subproblems.

mod krr;
mod svm;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domains::{SampleSet, FEASIBLE, INFEASIBLE};
use crate::error::{Error, Result};

pub use krr::{krr_jacobian, krr_predict, train_krr, KrrRegressor};
pub use svm::{svm_decision, svm_gradient, train_svm, SvmClassifier};

/// Affine map of inputs onto the unit box of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn identity(d: usize) -> Self {
        Self { offset: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I, d: usize) -> Self {
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for k in 0..d {
                lo[k] = lo[k].min(r[k]);
                hi[k] = hi[k].max(r[k]);
            }
        }
        let scale = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| if b - a > 1e-12 { b - a } else { 1.0 })
            .collect();
        let offset = lo.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        Self { offset, scale }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..x.len() {
            out[k] = (x[k] - self.offset[k]) / self.scale[k];
        }
    }
}

/// Cross-validation summary for one trained surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    /// `"accuracy"` or `"mse"`.
    pub metric: String,
    /// Per-fold validation scores of the chosen hyperparameters.
    pub fold_scores: Vec<f64>,
    pub chosen_hypers: BTreeMap<String, f64>,
    pub final_train_metric: f64,
    /// False when the solver hit its iteration limit.
    pub converged: bool,
}

impl CvReport {
    pub fn mean_cv(&self) -> f64 {
        if self.fold_scores.is_empty() {
            return f64::NAN;
        }
        self.fold_scores.iter().sum::<f64>() / self.fold_scores.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmGrid {
    pub reg_c: Vec<f64>,
    pub rbf_gamma: Vec<f64>,
}

impl Default for SvmGrid {
    fn default() -> Self {
        Self { reg_c: vec![1.0, 10.0, 100.0], rbf_gamma: vec![2.0, 8.0, 32.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrrGrid {
    pub rbf_gamma: Vec<f64>,
    pub ridge_lambda: Vec<f64>,
}

impl Default for KrrGrid {
    fn default() -> Self {
        Self { rbf_gamma: vec![0.5, 2.0, 8.0], ridge_lambda: vec![1e-8, 1e-6, 1e-4] }
    }
}

/// Oversample the minority class with Gaussian jitter (standard deviation
/// `jitter_fraction` times the per-dimension data range) until both classes
/// have equal size. Majority points are untouched.
pub fn augment_balance(data: &SampleSet, jitter_fraction: f64, seed: u64) -> Result<SampleSet> {
    let feas: Vec<usize> = (0..data.len()).filter(|&k| data.labels[k] == FEASIBLE).collect();
    let infeas: Vec<usize> = (0..data.len()).filter(|&k| data.labels[k] == INFEASIBLE).collect();
    if feas.is_empty() || infeas.is_empty() {
        return Err(Error::SingleClassDataset);
    }
    if feas.len() == infeas.len() {
        return Ok(data.clone());
    }
    let (minority, label, need) = if feas.len() < infeas.len() {
        (feas, FEASIBLE, infeas.len() - data.n_feasible())
    } else {
        (infeas.clone(), INFEASIBLE, data.n_feasible() - infeas.len())
    };
    let d = data.dim();
    let scale = Scaling::fit(data.rows(), d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = data.clone();
    let mut x = vec![0.0; d];
    for m in 0..need {
        let src = data.row(minority[m % minority.len()]);
        for k in 0..d {
            let sd = jitter_fraction * scale.scale[k];
            let e = if sd > 0.0 { Normal::new(0.0, sd).unwrap().sample(&mut rng) } else { 0.0 };
            x[k] = src[k] + e;
        }
        out.push(&x, label)?;
    }
    Ok(out)
}

/// Deterministic subsample keeping at most `per_class` points of each class.
pub fn cap_per_class(data: &SampleSet, per_class: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut keep = Vec::new();
    for label in [FEASIBLE, INFEASIBLE] {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&k| data.labels[k] == label).collect();
        if idx.len() > per_class {
            idx.shuffle(&mut rng);
            idx.truncate(per_class);
            idx.sort_unstable();
        }
        keep.extend(idx);
    }
    keep.sort_unstable();
    data.subset(&keep)
}

/// Fold index per row; stratified by `labels` when given.
pub(crate) fn fold_assignment(n: usize, k: usize, labels: Option<&[i8]>, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; n];
    let groups: Vec<Vec<usize>> = match labels {
        Some(l) => [FEASIBLE, INFEASIBLE]
            .iter()
            .map(|c| (0..n).filter(|&i| l[i] == *c).collect())
            .collect(),
        None => vec![(0..n).collect()],
    };
    let mut next = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

pub(crate) fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}
