//! Feasible-set samplers: Sobol rejection and an adaptive mixture proposal.

mod mixture;
pub mod sobol;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{BoxDomain, RoleSpan, SampleSet, FEASIBLE, INFEASIBLE};
use crate::error::{Error, Result};

pub use mixture::DiagonalMixture;
pub use sobol::{sobol, ShiftedSobol, Sobol};

/// Candidates evaluated per parallel batch. Fixed so results do not depend
/// on the worker count.
const BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerPolicy {
    #[default]
    SobolRejection,
    AdaptiveMixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub target_feasible: usize,
    pub max_evaluations: u64,
    pub seed: u64,
    pub policy: SamplerPolicy,
    pub mixture_components: usize,
    pub refine_fraction: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            target_feasible: 1000,
            max_evaluations: 200_000,
            seed: 0,
            policy: SamplerPolicy::SobolRejection,
            mixture_components: 8,
            refine_fraction: 0.5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_feasible == 0 {
            return Err(Error::InvalidSamplerConfig("target_feasible must be positive".into()));
        }
        if self.max_evaluations == 0 {
            return Err(Error::InvalidSamplerConfig("max_evaluations must be positive".into()));
        }
        if self.target_feasible as u64 > self.max_evaluations {
            return Err(Error::InvalidSamplerConfig(
                "target_feasible exceeds max_evaluations".into(),
            ));
        }
        if self.mixture_components == 0 {
            return Err(Error::InvalidSamplerConfig("mixture_components must be positive".into()));
        }
        if !(self.refine_fraction > 0.0 && self.refine_fraction <= 1.0) {
            return Err(Error::InvalidSamplerConfig("refine_fraction must lie in (0,1]".into()));
        }
        Ok(())
    }
}

/// Thread-safe evaluation tallies.
#[derive(Debug, Default)]
pub struct EvalCounter {
    constituent: AtomicU64,
    constraint: AtomicU64,
    nlp: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub constituent_evals: u64,
    pub constraint_evals: u64,
    pub nlp_solves: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(c: EvalCounts) -> Self {
        let e = Self::new();
        e.add(c);
        e
    }

    pub fn add_constituent(&self, n: u64) {
        self.constituent.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_constraint(&self, n: u64) {
        self.constraint.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_nlp(&self, n: u64) {
        self.nlp.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add(&self, c: EvalCounts) {
        self.add_constituent(c.constituent_evals);
        self.add_constraint(c.constraint_evals);
        self.add_nlp(c.nlp_solves);
    }

    pub fn snapshot(&self) -> EvalCounts {
        EvalCounts {
            constituent_evals: self.constituent.load(Ordering::Relaxed),
            constraint_evals: self.constraint.load(Ordering::Relaxed),
            nlp_solves: self.nlp.load(Ordering::Relaxed),
        }
    }
}

/// Outcome of checking one candidate.
#[derive(Debug, Clone)]
pub struct Verdict<T> {
    pub feasible: bool,
    /// Cost of the check in the units tracked by the sampler budget.
    pub counts: EvalCounts,
    pub payload: T,
}

impl Verdict<()> {
    pub fn simple(feasible: bool, evals: u64) -> Self {
        Verdict {
            feasible,
            counts: EvalCounts { constituent_evals: evals, constraint_evals: evals, nlp_solves: 0 },
            payload: (),
        }
    }
}

/// Samples, per-row payloads and per-phase acceptance tallies.
#[derive(Debug, Clone)]
pub struct SamplingOutcome<T> {
    pub samples: SampleSet,
    pub payloads: Vec<T>,
    /// `(evaluations, feasible)` per sampling phase.
    pub phases: Vec<(u64, u64)>,
}

impl<T> SamplingOutcome<T> {
    pub fn phase_acceptance(&self, phase: usize) -> Option<f64> {
        self.phases
            .get(phase)
            .filter(|(e, _)| *e > 0)
            .map(|(e, f)| *f as f64 / *e as f64)
    }
}

/// Affine map of unit-cube points into a box.
pub fn scale_to_box(unit_points: &[Vec<f64>], b: &BoxDomain) -> Result<Vec<Vec<f64>>> {
    unit_points
        .iter()
        .map(|p| {
            if p.len() != b.dim() {
                Err(Error::Dim { expected: b.dim(), got: p.len() })
            } else {
                Ok(b.from_unit(p))
            }
        })
        .collect()
}

/// Accepted points per constituent evaluation.
pub fn acceptance_ratio(n_accepted: u64, counts: &EvalCounts) -> Result<f64> {
    if counts.constituent_evals == 0 {
        return Err(Error::NonFinite("acceptance ratio with zero evaluations".into()));
    }
    Ok(n_accepted as f64 / counts.constituent_evals as f64)
}

/// Independent sub-seed for a named component of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream ^ 0x9e37_79b9_7f4a_7c15).gen()
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Source of unit-cube candidates.
trait Proposal: Sync {
    fn candidate(&self, index: u64) -> Vec<f64>;
}

impl Proposal for ShiftedSobol {
    fn candidate(&self, index: u64) -> Vec<f64> {
        self.point(index)
    }
}

struct MixtureProposal {
    mix: DiagonalMixture,
    seed: u64,
}

impl Proposal for MixtureProposal {
    fn candidate(&self, index: u64) -> Vec<f64> {
        let mut rng = stream_rng(self.seed, index);
        self.mix.sample(&mut rng)
    }
}

struct Accumulator<T> {
    samples: SampleSet,
    payloads: Vec<T>,
    spent: u64,
    feasible: usize,
}

/// Draw candidates `start..` from `prop` until the target or `budget` is hit.
/// Returns the number of candidates consumed.
#[allow(clippy::too_many_arguments)]
fn run_phase<T, F>(
    f: &F,
    prop: &dyn Proposal,
    b: &BoxDomain,
    target: usize,
    budget: u64,
    counter: &EvalCounter,
    acc: &mut Accumulator<T>,
    tally: &mut (u64, u64),
) -> Result<u64>
where
    T: Send,
    F: Fn(&[f64]) -> Result<Verdict<T>> + Sync,
{
    let mut next = 0u64;
    while acc.feasible < target && acc.spent < budget {
        let idx: Vec<u64> = (next..next + BATCH as u64).collect();
        let results: Vec<(Vec<f64>, Result<Verdict<T>>)> = idx
            .par_iter()
            .map(|&i| {
                let x = b.from_unit(&prop.candidate(i));
                let r = f(&x);
                (x, r)
            })
            .collect();
        for (x, r) in results {
            let v = r?;
            next += 1;
            counter.add(v.counts);
            acc.spent += v.counts.constituent_evals.max(1);
            tally.0 += v.counts.constituent_evals.max(1);
            if v.feasible {
                acc.feasible += 1;
                tally.1 += 1;
            }
            acc.samples.push(&x, if v.feasible { FEASIBLE } else { INFEASIBLE })?;
            acc.payloads.push(v.payload);
            if acc.feasible >= target || acc.spent >= budget {
                break;
            }
        }
    }
    Ok(next)
}

fn finish<T>(acc: Accumulator<T>, phases: Vec<(u64, u64)>) -> Result<SamplingOutcome<T>> {
    if acc.feasible == 0 {
        return Err(Error::BudgetExhaustedEmpty);
    }
    let mut samples = acc.samples;
    samples.n_evaluations = acc.spent;
    Ok(SamplingOutcome { samples, payloads: acc.payloads, phases })
}

/// Sobol rejection sampling returning per-row payloads.
pub fn rejection_sample_with<T, F>(
    f: F,
    b: &BoxDomain,
    cfg: &SamplerConfig,
    roles: Vec<RoleSpan>,
    counter: &EvalCounter,
) -> Result<SamplingOutcome<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<Verdict<T>> + Sync,
{
    cfg.validate()?;
    let prop = ShiftedSobol::new(b.dim(), cfg.seed)?;
    let mut acc = Accumulator { samples: SampleSet::new(b.dim(), roles), payloads: Vec::new(), spent: 0, feasible: 0 };
    let mut tally = (0, 0);
    run_phase(&f, &prop, b, cfg.target_feasible, cfg.max_evaluations, counter, &mut acc, &mut tally)?;
    finish(acc, vec![tally])
}

/// Screen with Sobol points, then sample from a mixture fitted to the
/// feasible points found so far.
pub fn adaptive_sample_with<T, F>(
    f: F,
    b: &BoxDomain,
    cfg: &SamplerConfig,
    roles: Vec<RoleSpan>,
    counter: &EvalCounter,
) -> Result<SamplingOutcome<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<Verdict<T>> + Sync,
{
    cfg.validate()?;
    let sob = ShiftedSobol::new(b.dim(), cfg.seed)?;
    let mut acc = Accumulator { samples: SampleSet::new(b.dim(), roles), payloads: Vec::new(), spent: 0, feasible: 0 };
    let phase1_budget = ((cfg.max_evaluations as f64) * cfg.refine_fraction).ceil() as u64;
    let mut t1 = (0, 0);
    let used = run_phase(&f, &sob, b, cfg.target_feasible, phase1_budget.max(1), counter, &mut acc, &mut t1)?;
    if acc.feasible >= cfg.target_feasible || acc.spent >= cfg.max_evaluations {
        return finish(acc, vec![t1]);
    }
    if acc.feasible < cfg.mixture_components {
        // too little to fit: keep screening with the same sequence
        let rest = SkipProposal { inner: &sob, skip: used };
        let mut t = t1;
        run_phase(&f, &rest, b, cfg.target_feasible, cfg.max_evaluations, counter, &mut acc, &mut t)?;
        return finish(acc, vec![t]);
    }
    let widths = b.widths();
    let unit: Vec<Vec<f64>> = acc
        .samples
        .feasible_rows()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(k, x)| if widths[k] > 0.0 { (x - b.lo[k]) / widths[k] } else { 0.5 })
                .collect()
        })
        .collect();
    let mut rng = stream_rng(cfg.seed, u64::MAX - 1);
    let mix = DiagonalMixture::fit(&unit, cfg.mixture_components, &mut rng);
    let prop = MixtureProposal { mix, seed: cfg.seed };
    let mut t2 = (0, 0);
    run_phase(&f, &prop, b, cfg.target_feasible, cfg.max_evaluations, counter, &mut acc, &mut t2)?;
    finish(acc, vec![t1, t2])
}

struct SkipProposal<'a> {
    inner: &'a ShiftedSobol,
    skip: u64,
}

impl Proposal for SkipProposal<'_> {
    fn candidate(&self, index: u64) -> Vec<f64> {
        self.inner.candidate(index + self.skip)
    }
}

/// Dispatch on the configured policy.
pub fn sample_with<T, F>(
    f: F,
    b: &BoxDomain,
    cfg: &SamplerConfig,
    roles: Vec<RoleSpan>,
    counter: &EvalCounter,
) -> Result<SamplingOutcome<T>>
where
    T: Send,
    F: Fn(&[f64]) -> Result<Verdict<T>> + Sync,
{
    match cfg.policy {
        SamplerPolicy::SobolRejection => rejection_sample_with(f, b, cfg, roles, counter),
        SamplerPolicy::AdaptiveMixture => adaptive_sample_with(f, b, cfg, roles, counter),
    }
}

/// Sobol rejection sampling with a plain `point -> (feasible, evals)` check.
pub fn rejection_sample<F>(f: F, b: &BoxDomain, cfg: &SamplerConfig, counter: &EvalCounter) -> Result<SampleSet>
where
    F: Fn(&[f64]) -> Result<(bool, u64)> + Sync,
{
    let g = |x: &[f64]| f(x).map(|(ok, n)| Verdict::simple(ok, n));
    rejection_sample_with(g, b, cfg, Vec::new(), counter).map(|o| o.samples)
}

pub fn adaptive_sample<F>(f: F, b: &BoxDomain, cfg: &SamplerConfig, counter: &EvalCounter) -> Result<SampleSet>
where
    F: Fn(&[f64]) -> Result<(bool, u64)> + Sync,
{
    let g = |x: &[f64]| f(x).map(|(ok, n)| Verdict::simple(ok, n));
    adaptive_sample_with(g, b, cfg, Vec::new(), counter).map(|o| o.samples)
}
