//! Forward, backward and composed propagation of local feasible sets
//! through the graph, one subproblem per node.

mod lift;
mod nlp;
mod persist;

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domains::{box_product, interval_hull, BoxDomain, ColumnRole, SampleSet};
use crate::error::{Error, Result};
use crate::graph::{GraphSpec, NodeId};
use crate::reconstruct::{graph_fingerprint, joint_box};
use crate::samplers::{derive_seed, sample_with, sobol, EvalCounter, EvalCounts, SamplerConfig, Verdict};
use crate::surrogates::{
    augment_balance, cap_per_class, svm_decision, train_krr, train_svm, CvReport, KrrGrid, KrrRegressor,
    SvmClassifier, SvmGrid,
};

pub use lift::{lift_coupling, NodeLayout};
pub use persist::{load_state, save_state};

use nlp::CheckContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlpConfig {
    /// Sobol starts tried after the nearest-neighbour warm starts.
    pub n_starts: usize,
    pub n_warm: usize,
    pub max_iter: usize,
    /// Largest accepted classifier value at the solution.
    pub feas_tol: f64,
    /// Largest accepted payload mismatch, relative to the input-box width.
    pub res_tol: f64,
    pub penalty_weight: f64,
    /// Include sibling (forward) and co-parent (backward) terms.
    pub coupling_terms: bool,
    /// Nodes whose payload maps are used directly instead of regressors.
    pub cheap_nodes: Vec<NodeId>,
}

impl Default for NlpConfig {
    fn default() -> Self {
        Self {
            n_starts: 2,
            n_warm: 2,
            max_iter: 100,
            feas_tol: 1e-3,
            res_tol: 1e-2,
            penalty_weight: 1e3,
            coupling_terms: true,
            cheap_nodes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub svm_grid: SvmGrid,
    pub krr_grid: KrrGrid,
    pub k_folds: usize,
    /// Jitter of oversampled minority points, as a fraction of data range.
    pub jitter: f64,
    pub classifier_cap: usize,
    pub regressor_cap: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            svm_grid: SvmGrid::default(),
            krr_grid: KrrGrid::default(),
            k_folds: 2,
            jitter: 0.01,
            classifier_cap: 600,
            regressor_cap: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    pub n_sobol: usize,
    /// Growth of first-pass input hulls.
    pub inflation: f64,
    /// Growth of the hull of the previous pass's feasible samples, which
    /// bounds the search box of every later pass.
    pub refine_inflation: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { n_sobol: 8192, inflation: 0.05, refine_inflation: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagateConfig {
    pub directions: String,
    pub sampler: SamplerConfig,
    pub nlp: NlpConfig,
    pub surrogate: SurrogateConfig,
    pub domain: DomainConfig,
    pub seed: u64,
}

impl Default for PropagateConfig {
    fn default() -> Self {
        Self {
            directions: "f".into(),
            sampler: SamplerConfig::default(),
            nlp: NlpConfig::default(),
            surrogate: SurrogateConfig::default(),
            domain: DomainConfig::default(),
            seed: 0,
        }
    }
}

pub fn parse_directions(s: &str) -> Result<Vec<char>> {
    if s.is_empty() || !s.chars().all(|c| c == 'f' || c == 'b') {
        return Err(Error::InvalidDirectionString(s.into()));
    }
    Ok(s.chars().collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDiagnostics {
    pub candidates: u64,
    pub feasible: u64,
    /// Embedded solves that neither converged nor met the tolerance.
    pub nlp_unconverged: u64,
}

/// Outcome of one node subproblem in one pass.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node: NodeId,
    /// Directions applied so far, e.g. `"fb"`.
    pub direction_tag: String,
    /// Search box of the subproblem, columns as in [`NodeLayout`].
    pub domain: BoxDomain,
    pub input_box: BoxDomain,
    pub samples: SampleSet,
    /// Outgoing payloads of the feasible rows, in row order.
    pub payloads: Vec<Vec<f64>>,
    pub classifier: SvmClassifier,
    pub classifier_report: Option<CvReport>,
    pub regressors: BTreeMap<NodeId, KrrRegressor>,
    pub regressor_reports: BTreeMap<NodeId, CvReport>,
    pub counts: EvalCounts,
    pub diagnostics: NodeDiagnostics,
    feasible: Vec<usize>,
}

impl NodeState {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(
        node: NodeId,
        direction_tag: String,
        domain: BoxDomain,
        input_box: BoxDomain,
        samples: SampleSet,
        payloads: Vec<Vec<f64>>,
        classifier: SvmClassifier,
        classifier_report: Option<CvReport>,
        regressors: BTreeMap<NodeId, KrrRegressor>,
        regressor_reports: BTreeMap<NodeId, CvReport>,
        counts: EvalCounts,
        diagnostics: NodeDiagnostics,
    ) -> Self {
        let feasible = samples.feasible_indices();
        Self {
            node,
            direction_tag,
            domain,
            input_box,
            samples,
            payloads,
            classifier,
            classifier_report,
            regressors,
            regressor_reports,
            counts,
            diagnostics,
            feasible,
        }
    }

    /// Indices of the feasible sample rows.
    pub fn feasible_rows(&self) -> &[usize] {
        &self.feasible
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        svm_decision(&self.classifier, x)
    }

    /// Inside the subproblem box and accepted by the classifier.
    pub fn classifier_feasible(&self, x: &[f64], tol: f64) -> bool {
        crate::domains::contains_unchecked(&self.domain, x) && self.decision(x) <= tol
    }
}

/// All node states of a run, one list per pass.
#[derive(Debug, Clone)]
pub struct PropagationState {
    pub directions: String,
    pub passes: Vec<Vec<NodeState>>,
    pub backward_domains: Option<Vec<BoxDomain>>,
    /// Evaluations spent estimating backward input domains.
    pub domain_counts: EvalCounts,
    /// Everything, including `domain_counts`.
    pub counts: EvalCounts,
    pub lifted: bool,
    /// Last node in precedence order.
    pub terminal: NodeId,
    pub graph_fingerprint: String,
    /// Free-form tag of the configuration that produced the run.
    pub config_hash: String,
}

impl PropagationState {
    pub fn latest(&self) -> &[NodeState] {
        self.passes.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Input boxes for a backward start: hulls of the inputs each node sees when
/// the graph is evaluated at `n_sobol` Sobol points of the search box.
/// Leaves are never evaluated; roots get a 0-dimensional box.
pub fn estimate_backward_domains(
    g: &GraphSpec,
    n_sobol: usize,
    inflation: f64,
    counter: &EvalCounter,
) -> Result<Vec<BoxDomain>> {
    if n_sobol < 2 {
        return Err(Error::InvalidArgument("n_sobol must be at least 2".into()));
    }
    let layouts = NodeLayout::all(g);
    let b = joint_box(g);
    let np = g.param_dim();
    let n = g.n_nodes();
    let active: Vec<NodeId> =
        g.topological_order().iter().copied().filter(|&i| !g.out_neighbours(i).is_empty()).collect();
    let pts = sobol(b.dim().max(1), n_sobol, 0)?;
    let rows: Vec<Vec<Vec<f64>>> = pts
        .par_iter()
        .map(|p| {
            let x = b.from_unit(&p[..b.dim()]);
            let (v, z) = x.split_at(np);
            let mut outs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
            let mut seen: Vec<Vec<f64>> = vec![Vec::new(); n];
            for &i in g.topological_order() {
                if g.in_neighbours(i).is_empty() && g.out_neighbours(i).is_empty() {
                    continue;
                }
                let mut u = Vec::new();
                let mut stripped = Vec::new();
                for &j in g.in_neighbours(i) {
                    let y = &outs[j][g.out_slot(j, i)];
                    u.extend_from_slice(y);
                    stripped.extend_from_slice(&y[..y.len() - layouts[i].nz]);
                }
                seen[i] = stripped;
                if g.out_neighbours(i).is_empty() {
                    continue;
                }
                let off = g.param_offset(i);
                let e = crate::reconstruct::eval_node(g, i, &v[off..off + layouts[i].n_v], &u, z)?;
                outs[i] = e.outputs;
            }
            Ok(seen)
        })
        .collect::<Result<_>>()?;
    counter.add_constituent((n_sobol * active.len()) as u64);
    (0..n)
        .map(|i| {
            if g.in_neighbours(i).is_empty() {
                return Ok(BoxDomain::empty());
            }
            interval_hull(rows.iter().map(|r| r[i].as_slice()), inflation)
        })
        .collect()
}

/// Hull of the payloads that the in-neighbours' feasible samples send to
/// node `i`, one block per in-edge.
pub fn forward_input_domain(
    g: &GraphSpec,
    i: NodeId,
    states: &[Option<NodeState>],
    inflation: f64,
) -> Result<BoxDomain> {
    let mut parts = Vec::new();
    for &j in g.in_neighbours(i) {
        let s = states.get(j).and_then(Option::as_ref).ok_or(Error::MissingNodeState(j))?;
        if s.payloads.is_empty() {
            return Err(Error::EmptyUpstreamSolution(j));
        }
        let r = NodeLayout::new(g, j).payload_range(i).expect("edge present");
        parts.push(interval_hull(s.payloads.iter().map(|p| &p[r.clone()]), inflation)?);
    }
    let refs: Vec<&BoxDomain> = parts.iter().collect();
    Ok(box_product(&refs))
}

fn candidate_seed(base: u64, x: &[f64]) -> u64 {
    x.iter().fold(base, |h, v| (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3).rotate_left(17))
}

fn check_one(
    g: &GraphSpec,
    i: NodeId,
    x: &[f64],
    states: &[Option<&NodeState>],
    own_box: &BoxDomain,
    nlp: &NlpConfig,
    forward: bool,
    counter: &EvalCounter,
) -> Result<bool> {
    let layouts = NodeLayout::all(g);
    let ctx = CheckContext { g, layouts: &layouts, states: states.to_vec(), nlp, own_box };
    let c = ctx.check(i, x, forward, !forward, candidate_seed(0, x))?;
    counter.add(c.counts);
    Ok(c.feasible)
}

/// Is `x = (v_i, u_i[, z])` in the forward relaxation of node `i`? Each
/// in-neighbour must reach `u_i` from a point its classifier accepts.
pub fn feasibility_forward(
    g: &GraphSpec,
    i: NodeId,
    x: &[f64],
    states: &[Option<&NodeState>],
    own_box: &BoxDomain,
    nlp: &NlpConfig,
    counter: &EvalCounter,
) -> Result<bool> {
    check_one(g, i, x, states, own_box, nlp, true, counter)
}

/// Is `x` in the backward relaxation of node `i`? Each out-neighbour must
/// accept the true payload at some point its classifier accepts.
pub fn feasibility_backward(
    g: &GraphSpec,
    i: NodeId,
    x: &[f64],
    states: &[Option<&NodeState>],
    own_box: &BoxDomain,
    nlp: &NlpConfig,
    counter: &EvalCounter,
) -> Result<bool> {
    check_one(g, i, x, states, own_box, nlp, false, counter)
}

fn train_classifier(samples: &SampleSet, cfg: &SurrogateConfig, seed: u64) -> Result<(SvmClassifier, Option<CvReport>)> {
    if samples.n_feasible() == samples.len() {
        return Ok((SvmClassifier::constant(samples.dim(), -1.0), None));
    }
    let capped = cap_per_class(samples, cfg.classifier_cap, seed);
    let balanced = augment_balance(&capped, cfg.jitter, seed)?;
    let (m, r) = train_svm(&balanced, &cfg.svm_grid, cfg.k_folds, seed)?;
    Ok((m, Some(r)))
}

type Regressors = (BTreeMap<NodeId, KrrRegressor>, BTreeMap<NodeId, CvReport>);

fn train_regressors(
    state_rows: &[Vec<f64>],
    payloads: &[Vec<f64>],
    layout: &NodeLayout,
    cfg: &SurrogateConfig,
    skip: bool,
    seed: u64,
) -> Result<Regressors> {
    let mut models = BTreeMap::new();
    let mut reports = BTreeMap::new();
    if skip || layout.outputs.is_empty() {
        return Ok((models, reports));
    }
    let mut idx: Vec<usize> = (0..state_rows.len()).collect();
    if idx.len() > cfg.regressor_cap {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(cfg.regressor_cap);
        idx.sort_unstable();
    }
    let x: Vec<Vec<f64>> = idx.iter().map(|&r| state_rows[r].clone()).collect();
    for &(k, _) in &layout.outputs {
        let pr = layout.payload_range(k).expect("out-edge");
        let y: Vec<Vec<f64>> = idx.iter().map(|&r| payloads[r][pr.clone()].to_vec()).collect();
        if x.len() >= 2 * cfg.k_folds.max(2) {
            let (m, rep) = train_krr(&x, &y, &cfg.krr_grid, cfg.k_folds, seed ^ k as u64)?;
            models.insert(k, m);
            reports.insert(k, rep);
        } else {
            models.insert(k, KrrRegressor::fit(&x, &y, 2.0, 1e-6)?);
        }
    }
    Ok((models, reports))
}

/// Search box of node `i` for the current pass.
fn node_domain(
    g: &GraphSpec,
    layout: &NodeLayout,
    previous: Option<&NodeState>,
    input_box: impl FnOnce() -> Result<BoxDomain>,
    inflation: f64,
) -> Result<BoxDomain> {
    let i = layout.node;
    let pbox = &g.node(i).param_box;
    let zbox = match (&g.coupling, layout.nz) {
        (Some(c), nz) if nz > 0 => c.bounds.clone(),
        _ => BoxDomain::empty(),
    };
    if let Some(prev) = previous {
        let rows = prev.feasible_rows().iter().map(|&r| prev.samples.row(r));
        let mut h = interval_hull(rows, inflation)?;
        for c in 0..layout.n_v {
            h.lo[c] = h.lo[c].max(pbox.lo[c]);
            h.hi[c] = h.hi[c].min(pbox.hi[c]);
        }
        for (k, c) in layout.z_cols().enumerate() {
            h.lo[c] = h.lo[c].max(zbox.lo[k]);
            h.hi[c] = h.hi[c].min(zbox.hi[k]);
        }
        return Ok(h);
    }
    let u = input_box()?;
    Ok(box_product(&[pbox, &u, &zbox]))
}

/// Run the passes named by `cfg.directions` (e.g. `"f"`, `"b"`, `"fb"`).
/// Graphs with a coupling vector are lifted first.
pub fn propagate(graph: &GraphSpec, cfg: &PropagateConfig) -> Result<PropagationState> {
    let letters = parse_directions(&cfg.directions)?;
    cfg.sampler.validate()?;
    let g = if graph.coupling.is_some() && !graph.lifted { lift_coupling(graph)? } else { graph.clone() };
    let n = g.n_nodes();
    let layouts = NodeLayout::all(&g);
    let total = EvalCounter::new();
    let mut backward_domains = None;
    let mut domain_counts = EvalCounts::default();
    let mut passes: Vec<Vec<NodeState>> = Vec::new();
    for (p, &letter) in letters.iter().enumerate() {
        let tag: String = letters[..=p].iter().collect();
        let order: Vec<NodeId> = match letter {
            'f' => g.topological_order().to_vec(),
            _ => g.topological_order().iter().rev().copied().collect(),
        };
        if letter == 'b' && p == 0 {
            let c = EvalCounter::new();
            backward_domains =
                Some(estimate_backward_domains(&g, cfg.domain.n_sobol, cfg.domain.inflation, &c)?);
            domain_counts = c.snapshot();
            total.add(domain_counts);
        }
        let previous = passes.last();
        let (forward, backward) = (letter == 'f' || p > 0, letter == 'b' || p > 0);
        let mut current: Vec<Option<NodeState>> = vec![None; n];
        for &i in &order {
            let layout = &layouts[i];
            let prev_i = previous.map(|pp| &pp[i]);
            let domain = node_domain(
                &g,
                layout,
                prev_i,
                || match letter {
                    'f' => forward_input_domain(&g, i, &current, cfg.domain.inflation),
                    _ => Ok(backward_domains.as_ref().expect("estimated")[i].clone()),
                },
                cfg.domain.refine_inflation,
            )?;
            let input_box = domain.slice(layout.u_cols());
            let stream = (p as u64) << 20 | i as u64;
            let mut scfg = cfg.sampler.clone();
            scfg.seed = derive_seed(cfg.seed, stream);
            let nlp_seed = derive_seed(cfg.seed, stream | 1 << 40);
            let node_counter = EvalCounter::new();
            let outcome = {
                let states: Vec<Option<&NodeState>> = (0..n)
                    .map(|j| current[j].as_ref().or_else(|| previous.map(|pp| &pp[j])))
                    .collect();
                let ctx = CheckContext { g: &g, layouts: &layouts, states, nlp: &cfg.nlp, own_box: &domain };
                let check = |x: &[f64]| -> Result<Verdict<(Vec<f64>, u64)>> {
                    let c = ctx.check(i, x, forward, backward, candidate_seed(nlp_seed, x))?;
                    Ok(Verdict { feasible: c.feasible, counts: c.counts, payload: (c.payload, c.unconverged) })
                };
                sample_with(check, &domain, &scfg, layout.roles(), &node_counter)
            };
            let outcome = match outcome {
                Err(Error::BudgetExhaustedEmpty) => {
                    log::error!("node {i} ({}) pass {tag}: no feasible sample", g.node(i).name);
                    return Err(Error::EmptySubproblemSolution(i));
                }
                other => other?,
            };
            let samples = outcome.samples;
            let mut diagnostics = NodeDiagnostics { candidates: samples.len() as u64, ..Default::default() };
            let mut payloads = Vec::new();
            for (r, (pl, unconv)) in outcome.payloads.into_iter().enumerate() {
                diagnostics.nlp_unconverged += unconv;
                if samples.labels[r] == crate::domains::FEASIBLE {
                    payloads.push(pl);
                }
            }
            diagnostics.feasible = payloads.len() as u64;
            let sseed = derive_seed(cfg.seed, stream | 2 << 40);
            let (classifier, classifier_report) = train_classifier(&samples, &cfg.surrogate, sseed)?;
            let feas_rows: Vec<Vec<f64>> = samples.feasible_rows().map(<[f64]>::to_vec).collect();
            let cheap = cfg.nlp.cheap_nodes.contains(&i);
            let (regressors, regressor_reports) =
                train_regressors(&feas_rows, &payloads, layout, &cfg.surrogate, cheap, sseed)?;
            let counts = node_counter.snapshot();
            total.add(counts);
            info!(
                "pass {tag} node {i} ({}): {} feasible of {} candidates, {} evals, {} solves",
                g.node(i).name,
                diagnostics.feasible,
                diagnostics.candidates,
                counts.constituent_evals,
                counts.nlp_solves
            );
            current[i] = Some(NodeState::assemble(
                i,
                tag.clone(),
                domain,
                input_box,
                samples,
                payloads,
                classifier,
                classifier_report,
                regressors,
                regressor_reports,
                counts,
                diagnostics,
            ));
        }
        passes.push(current.into_iter().map(|s| s.expect("every node solved")).collect());
    }
    Ok(PropagationState {
        directions: cfg.directions.clone(),
        passes,
        backward_domains,
        domain_counts,
        counts: total.snapshot(),
        lifted: g.lifted,
        terminal: *g.topological_order().last().expect("nonempty graph"),
        graph_fingerprint: graph_fingerprint(graph),
        config_hash: String::new(),
    })
}

/// Coupling columns of the terminal node's feasible samples.
pub fn reduced_coupling_domain(state: &PropagationState) -> Result<SampleSet> {
    if !state.lifted {
        return Err(Error::NotLiftedRun);
    }
    let s = state.latest().get(state.terminal).ok_or(Error::MissingNodeState(state.terminal))?;
    let roles: Vec<ColumnRole> = [ColumnRole::Lift, ColumnRole::ErrorLift]
        .into_iter()
        .filter(|r| s.samples.span(*r).is_some())
        .collect();
    let proj = s.samples.project(&roles)?;
    Ok(proj.subset(s.feasible_rows()))
}
