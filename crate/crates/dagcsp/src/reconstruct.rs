//! Joint evaluation, reconstruction from propagated node sets, the
//! simultaneous baseline and run comparison.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{box_product, BoxDomain, ColumnRole, RoleSpan, SampleSet, FEASIBLE, INFEASIBLE};
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeEval, NodeId};
use crate::propagate::{reduced_coupling_domain, PropagationState};
use crate::samplers::{acceptance_ratio, sample_with, stream_rng, EvalCounter, EvalCounts, SamplerConfig, Verdict};

/// Every intermediate quantity of one forward pass through the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeEval {
    /// Input vector seen by each node, indexed by node id.
    pub inputs: Vec<Vec<f64>>,
    pub evals: Vec<NodeEval>,
    pub n_evals: u64,
}

impl CompositeEval {
    pub fn feasible(&self) -> bool {
        self.evals.iter().all(NodeEval::feasible)
    }

    pub fn max_violation(&self) -> f64 {
        self.evals.iter().map(NodeEval::max_violation).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluate node `i` and check the shape of what it returns.
pub(crate) fn eval_node(g: &GraphSpec, i: NodeId, v: &[f64], u: &[f64], z: &[f64]) -> Result<NodeEval> {
    let m = &g.node(i).model;
    let e = m.evaluate(v, u, z)?;
    let outs = g.out_neighbours(i);
    if e.outputs.len() != outs.len() {
        return Err(Error::Model(format!("node {i} returned {} payloads, expected {}", e.outputs.len(), outs.len())));
    }
    for (y, &k) in e.outputs.iter().zip(outs) {
        if y.len() != g.edge(i, k).dim {
            return Err(Error::DimensionMismatch {
                from: i,
                to: k,
                reason: format!("payload has {} entries", y.len()),
            });
        }
    }
    if e.constraints.len() != m.n_constraints() {
        return Err(Error::Model(format!("node {i} returned {} constraints", e.constraints.len())));
    }
    if e.outputs.iter().flatten().chain(&e.constraints).any(|x| x.is_nan()) {
        return Err(Error::NonFinite(format!("node {i} output")));
    }
    Ok(e)
}

/// Single forward pass in precedence order, wiring payloads to inputs.
/// `v` stacks node parameters by node id; `z` is the coupling vector (empty
/// when the graph has none).
pub fn evaluate_composite(g: &GraphSpec, v: &[f64], z: &[f64]) -> Result<CompositeEval> {
    if v.len() != g.param_dim() {
        return Err(Error::Dim { expected: g.param_dim(), got: v.len() });
    }
    if z.len() != g.coupling_dim() {
        return Err(Error::Dim { expected: g.coupling_dim(), got: z.len() });
    }
    let n = g.n_nodes();
    let mut inputs = vec![Vec::new(); n];
    let mut evals: Vec<Option<NodeEval>> = vec![None; n];
    for &i in g.topological_order() {
        let mut u = Vec::with_capacity(g.input_dim(i));
        for &j in g.in_neighbours(i) {
            let e = evals[j].as_ref().expect("precedence order");
            u.extend_from_slice(&e.outputs[g.out_slot(j, i)]);
        }
        let off = g.param_offset(i);
        let vi = &v[off..off + g.node(i).param_box.dim()];
        evals[i] = Some(eval_node(g, i, vi, &u, z)?);
        inputs[i] = u;
    }
    Ok(CompositeEval { inputs, evals: evals.into_iter().map(Option::unwrap).collect(), n_evals: n as u64 })
}

/// Search box of the joint problem: stacked parameters, then coupling.
pub fn joint_box(g: &GraphSpec) -> BoxDomain {
    let p = g.param_box();
    match &g.coupling {
        Some(c) => box_product(&[&p, &c.bounds]),
        None => p,
    }
}

/// Column roles of joint samples.
pub fn joint_roles(g: &GraphSpec) -> Vec<RoleSpan> {
    let mut roles = Vec::new();
    let mut start = 0;
    for node in &g.nodes {
        let len = node.param_box.dim();
        if len > 0 {
            roles.push(RoleSpan { role: ColumnRole::Param(node.id), start, len });
        }
        start += len;
    }
    if let Some(c) = &g.coupling {
        let nz = c.bounds.dim() - c.n_error;
        if nz > 0 {
            roles.push(RoleSpan { role: ColumnRole::Lift, start, len: nz });
        }
        if c.n_error > 0 {
            roles.push(RoleSpan { role: ColumnRole::ErrorLift, start: start + nz, len: c.n_error });
        }
    }
    roles
}

/// Structural summary used to tell runs on different graphs apart.
pub fn graph_fingerprint(g: &GraphSpec) -> String {
    let mut s = String::new();
    for n in &g.nodes {
        s.push_str(&format!("{}:{}:{:?}:{:?};", n.id, n.name, n.param_box.lo, n.param_box.hi));
    }
    for e in &g.edges {
        s.push_str(&format!("{}>{}:{};", e.from, e.to, e.dim));
    }
    if let Some(c) = &g.coupling {
        s.push_str(&format!("z{:?}{:?}{}", c.bounds.lo, c.bounds.hi, c.n_error));
    }
    s
}

/// Where a set of joint samples came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunSource {
    Decomposition { directions: String },
    Simultaneous,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    /// Every evaluated joint candidate, labelled.
    pub joint_samples: SampleSet,
    pub acceptance_ratio: f64,
    /// All evaluations charged to the run, propagation included.
    pub counts: EvalCounts,
    pub source: RunSource,
    pub graph_fingerprint: String,
}

/// What a run reports about itself; enough to compare two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub source: RunSource,
    pub acceptance_ratio: f64,
    pub counts: EvalCounts,
    pub n_feasible: usize,
    pub n_candidates: usize,
    pub graph_fingerprint: String,
}

impl ReconstructionResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            source: self.source.clone(),
            acceptance_ratio: self.acceptance_ratio,
            counts: self.counts,
            n_feasible: self.joint_samples.n_feasible(),
            n_candidates: self.joint_samples.len(),
            graph_fingerprint: self.graph_fingerprint.clone(),
        }
    }
}

const BATCH: u64 = 128;

/// Uniform draws from the product of the propagated node sets (and the
/// reduced coupling domain for lifted runs), kept when the whole graph is
/// feasible. `budget` caps the evaluations spent here; the acceptance
/// ratio charges the propagation cost as well.
pub fn reconstruct(
    g: &GraphSpec,
    state: &PropagationState,
    target_k: usize,
    budget: u64,
    seed: u64,
) -> Result<ReconstructionResult> {
    if target_k == 0 || budget == 0 {
        return Err(Error::InvalidArgument("target and budget must be positive".into()));
    }
    if graph_fingerprint(g) != state.graph_fingerprint {
        return Err(Error::StateMismatch("propagation was run on a different graph".into()));
    }
    let latest = state.latest();
    if latest.len() != g.n_nodes() {
        return Err(Error::StateMismatch("node count differs".into()));
    }
    let pools: Vec<(usize, usize, Vec<usize>)> = latest
        .iter()
        .map(|s| (s.node, g.node(s.node).param_box.dim(), s.feasible_rows().to_vec()))
        .collect();
    for (i, _, rows) in &pools {
        if rows.is_empty() {
            return Err(Error::EmptySubproblemSolution(*i));
        }
    }
    let zpool = if g.coupling.is_some() { Some(reduced_coupling_domain(state)?) } else { None };
    if zpool.as_ref().is_some_and(SampleSet::is_empty) {
        return Err(Error::EmptySubproblemSolution(state.terminal));
    }
    let draw = |n: u64| -> Vec<f64> {
        let mut rng = stream_rng(seed, n);
        let mut x = Vec::with_capacity(g.param_dim() + g.coupling_dim());
        for (i, n_v, rows) in &pools {
            let r = rows[rng.gen_range(0..rows.len())];
            x.extend_from_slice(&latest[*i].samples.row(r)[..*n_v]);
        }
        if let Some(zs) = &zpool {
            x.extend_from_slice(zs.row(rng.gen_range(0..zs.len())));
        }
        x
    };
    let np = g.param_dim();
    let per = g.n_nodes() as u64;
    let mut out = SampleSet::new(np + g.coupling_dim(), joint_roles(g));
    let (mut spent, mut found, mut next) = (0u64, 0usize, 0u64);
    'outer: while found < target_k && spent < budget {
        let batch: Vec<(Vec<f64>, Result<bool>)> = (next..next + BATCH)
            .into_par_iter()
            .map(|n| {
                let x = draw(n);
                let ok = evaluate_composite(g, &x[..np], &x[np..]).map(|c| c.feasible());
                (x, ok)
            })
            .collect();
        for (x, ok) in batch {
            let ok = ok?;
            next += 1;
            spent += per;
            if ok {
                found += 1;
            }
            out.push(&x, if ok { FEASIBLE } else { INFEASIBLE })?;
            if found >= target_k || spent >= budget {
                break 'outer;
            }
        }
    }
    if found == 0 {
        return Err(Error::BudgetExhaustedEmpty);
    }
    out.n_evaluations = spent;
    let mut counts = state.counts;
    counts.constituent_evals += spent;
    counts.constraint_evals += spent;
    Ok(ReconstructionResult {
        acceptance_ratio: acceptance_ratio(found as u64, &counts)?,
        joint_samples: out,
        counts,
        source: RunSource::Decomposition { directions: state.directions.clone() },
        graph_fingerprint: state.graph_fingerprint.clone(),
    })
}

/// Sample the joint box directly, checking every node constraint.
pub fn simultaneous(g: &GraphSpec, cfg: &SamplerConfig) -> Result<ReconstructionResult> {
    let b = joint_box(g);
    let np = g.param_dim();
    let per = g.n_nodes() as u64;
    let counter = EvalCounter::new();
    let check = |x: &[f64]| -> Result<Verdict<()>> {
        let ok = evaluate_composite(g, &x[..np], &x[np..])?.feasible();
        let counts = EvalCounts { constituent_evals: per, constraint_evals: per, nlp_solves: 0 };
        Ok(Verdict { feasible: ok, counts, payload: () })
    };
    let outcome = sample_with(check, &b, cfg, joint_roles(g), &counter)?;
    let counts = counter.snapshot();
    Ok(ReconstructionResult {
        acceptance_ratio: acceptance_ratio(outcome.samples.n_feasible() as u64, &counts)?,
        joint_samples: outcome.samples,
        counts,
        source: RunSource::Simultaneous,
        graph_fingerprint: graph_fingerprint(g),
    })
}

fn ratio_ser<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn ratio_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum R {
        Num(f64),
        Text(serde::de::IgnoredAny),
    }
    Ok(match R::deserialize(d)? {
        R::Num(x) => x,
        R::Text(_) => f64::INFINITY,
    })
}

/// Side-by-side metrics of two runs on the same graph; `ar_ratio` is
/// `a / b`, written as `"inf"` when `b` found nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub a: RunSummary,
    pub b: RunSummary,
    #[serde(serialize_with = "ratio_ser", deserialize_with = "ratio_de")]
    pub ar_ratio: f64,
    #[serde(serialize_with = "ratio_ser", deserialize_with = "ratio_de")]
    pub eval_ratio: f64,
}

pub fn compare_runs(a: &RunSummary, b: &RunSummary) -> Result<CompareReport> {
    if a.graph_fingerprint != b.graph_fingerprint {
        return Err(Error::GraphMismatch);
    }
    let div = |x: f64, y: f64| if y > 0.0 { x / y } else if x == y { 1.0 } else { f64::INFINITY };
    Ok(CompareReport {
        a: a.clone(),
        b: b.clone(),
        ar_ratio: div(a.acceptance_ratio, b.acceptance_ratio),
        eval_ratio: div(a.counts.constituent_evals as f64, b.counts.constituent_evals as f64),
    })
}
