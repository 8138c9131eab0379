//! Embedded problems that decide whether a candidate of one node can be
//! matched by feasible points of its neighbours.

use std::sync::atomic::{AtomicU64, Ordering};

use super::lift::NodeLayout;
use super::{NlpConfig, NodeState};
use crate::domains::{box_product, BoxDomain};
use crate::error::Result;
use crate::graph::{GraphSpec, NodeId};
use crate::optim::{multistart_from, MinimizeOptions};
use crate::reconstruct::eval_node;
use crate::samplers::EvalCounts;
use crate::surrogates::{krr_jacobian, svm_gradient};

/// Map carried by an edge inside an embedded problem: the trained regressor
/// or, for nodes declared cheap, the true function with difference
/// derivatives.
enum EdgeMap<'a> {
    Surrogate(&'a crate::surrogates::KrrRegressor),
    Exact { g: &'a GraphSpec, layout: &'a NodeLayout, to: NodeId, calls: &'a AtomicU64 },
}

impl EdgeMap<'_> {
    fn out_dim(&self) -> usize {
        match self {
            EdgeMap::Surrogate(r) => r.output_dim,
            EdgeMap::Exact { layout, to, .. } => layout.payload_range(*to).map_or(0, |r| r.len()),
        }
    }

    fn eval(&self, x: &[f64], jac: &mut [f64]) -> Vec<f64> {
        match self {
            EdgeMap::Surrogate(r) => krr_jacobian(r, x, jac),
            EdgeMap::Exact { g, layout, to, calls } => {
                let r = layout.payload_range(*to).expect("edge present");
                let f = |x: &[f64]| -> Vec<f64> {
                    calls.fetch_add(1, Ordering::Relaxed);
                    let (v, u, z) = layout.model_args(x);
                    match eval_node(g, layout.node, v, &u, z) {
                        Ok(e) => layout.payload(&e)[r.clone()].to_vec(),
                        Err(_) => vec![f64::NAN; r.len()],
                    }
                };
                let y = f(x);
                let d = x.len();
                let mut xp = x.to_vec();
                for c in 0..d {
                    let h = 1e-6 * x[c].abs().max(1.0);
                    xp[c] = x[c] + h;
                    let yp = f(&xp);
                    xp[c] = x[c] - h;
                    let ym = f(&xp);
                    xp[c] = x[c];
                    for o in 0..y.len() {
                        jac[o * d + c] = (yp[o] - ym[o]) / (2.0 * h);
                    }
                }
                y
            }
        }
    }
}

/// One neighbour's subproblem point inside the embedded problem.
struct Block<'a> {
    state: &'a NodeState,
    template: Vec<f64>,
    vars: Vec<usize>,
    offset: usize,
}

/// Columns `start..` of block `dst` are set to `map(x_src)`.
struct Tie<'a> {
    dst: usize,
    start: usize,
    src: usize,
    map: EdgeMap<'a>,
}

enum Target {
    Const(Vec<f64>),
    Cols { block: usize, start: usize },
}

/// Penalised mismatch between `map(x_src)` and a target.
struct Residual<'a> {
    src: usize,
    map: EdgeMap<'a>,
    target: Target,
    inv_width: Vec<f64>,
}

struct Problem<'a> {
    blocks: Vec<Block<'a>>,
    ties: Vec<Tie<'a>>,
    residuals: Vec<Residual<'a>>,
    weight: f64,
    n_vars: usize,
}

struct Parts {
    hinge: f64,
    max_resid: f64,
}

impl<'a> Problem<'a> {
    fn new(weight: f64) -> Self {
        Self { blocks: Vec::new(), ties: Vec::new(), residuals: Vec::new(), weight, n_vars: 0 }
    }

    fn add_block(&mut self, state: &'a NodeState, template: Vec<f64>, fixed: &[usize]) -> usize {
        let vars: Vec<usize> = (0..template.len()).filter(|c| !fixed.contains(c)).collect();
        let offset = self.n_vars;
        self.n_vars += vars.len();
        self.blocks.push(Block { state, template, vars, offset });
        self.blocks.len() - 1
    }

    fn var_box(&self) -> BoxDomain {
        let parts: Vec<BoxDomain> = self
            .blocks
            .iter()
            .map(|b| {
                let lo = b.vars.iter().map(|&c| b.state.domain.lo[c]).collect();
                let hi = b.vars.iter().map(|&c| b.state.domain.hi[c]).collect();
                BoxDomain { lo, hi }
            })
            .collect();
        let refs: Vec<&BoxDomain> = parts.iter().collect();
        box_product(&refs)
    }

    fn start_from(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_vars];
        for (b, p) in self.blocks.iter().zip(points) {
            for (k, &c) in b.vars.iter().enumerate() {
                y[b.offset + k] = p[c];
            }
        }
        y
    }

    /// Objective, gradient and its hinge/residual parts.
    fn evaluate(&self, y: &[f64], grad: &mut [f64]) -> (f64, Parts) {
        let mut xs: Vec<Vec<f64>> = self
            .blocks
            .iter()
            .map(|b| {
                let mut x = b.template.clone();
                for (k, &c) in b.vars.iter().enumerate() {
                    x[c] = y[b.offset + k];
                }
                x
            })
            .collect();
        let mut tie_jacs = Vec::with_capacity(self.ties.len());
        for t in &self.ties {
            let d = xs[t.src].len();
            let mut jac = vec![0.0; t.map.out_dim() * d];
            let out = t.map.eval(&xs[t.src], &mut jac);
            for (o, v) in out.iter().enumerate() {
                xs[t.dst][t.start + o] = *v;
            }
            tie_jacs.push((jac, out.len()));
        }
        let mut dx: Vec<Vec<f64>> = xs.iter().map(|x| vec![0.0; x.len()]).collect();
        let mut f = 0.0;
        let mut hinge = 0.0;
        let mut g = Vec::new();
        for (bi, (b, x)) in self.blocks.iter().zip(&xs).enumerate() {
            g.resize(x.len(), 0.0);
            let val = svm_gradient(&b.state.classifier, x, &mut g);
            if val > 0.0 {
                hinge += val;
                for c in 0..x.len() {
                    dx[bi][c] += g[c];
                }
            }
        }
        f += hinge;
        let mut max_resid: f64 = 0.0;
        for r in &self.residuals {
            let d = xs[r.src].len();
            let m = r.inv_width.len();
            let mut jac = vec![0.0; r.map.out_dim() * d];
            let yhat = r.map.eval(&xs[r.src], &mut jac);
            for o in 0..m {
                let target = match &r.target {
                    Target::Const(t) => t[o],
                    Target::Cols { block, start } => xs[*block][start + o],
                };
                let res = (target - yhat[o]) * r.inv_width[o];
                max_resid = max_resid.max(res.abs());
                f += self.weight * res * res;
                let s = 2.0 * self.weight * res * r.inv_width[o];
                for c in 0..d {
                    dx[r.src][c] -= s * jac[o * d + c];
                }
                if let Target::Cols { block, start } = r.target {
                    dx[block][start + o] += s;
                }
            }
        }
        for (t, (jac, m)) in self.ties.iter().zip(&tie_jacs).rev() {
            let d = xs[t.src].len();
            for o in 0..*m {
                let up = dx[t.dst][t.start + o];
                if up != 0.0 {
                    for c in 0..d {
                        dx[t.src][c] += up * jac[o * d + c];
                    }
                }
            }
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for (k, &c) in b.vars.iter().enumerate() {
                grad[b.offset + k] = dx[bi][c];
            }
        }
        (f, Parts { hinge, max_resid })
    }

    /// Solve and report whether the attained point satisfies the tolerances.
    fn feasible(&self, warm: &[Vec<f64>], cfg: &NlpConfig, seed: u64) -> (bool, bool) {
        let b = self.var_box();
        let obj = |y: &[f64], g: &mut [f64]| self.evaluate(y, g).0;
        let opts = MinimizeOptions { tol: 1e-8, max_iter: cfg.max_iter, f_target: cfg.feas_tol };
        let r = multistart_from(&obj, &b, warm, cfg.n_starts, seed, &opts);
        let mut g = vec![0.0; self.n_vars];
        let (_, parts) = self.evaluate(&r.x_star, &mut g);
        let ok = parts.hinge <= cfg.feas_tol && parts.max_resid <= cfg.res_tol;
        (ok, ok || r.converged)
    }
}

fn fixed_cols(layout: &NodeLayout, extra: Option<std::ops::Range<usize>>) -> Vec<usize> {
    let mut f: Vec<usize> = layout.z_cols().collect();
    if let Some(r) = extra {
        f.extend(r);
    }
    f
}

/// Feasible rows of `state` ordered by scaled distance of `key(row)` to
/// `target`; returns the closest `n`.
fn nearest<F>(state: &NodeState, n: usize, target: &[f64], scale: &[f64], key: F) -> Vec<usize>
where
    F: Fn(usize) -> Vec<f64>,
{
    let mut scored: Vec<(f64, usize)> = state
        .feasible_rows()
        .iter()
        .enumerate()
        .map(|(fi, _)| {
            let k = key(fi);
            let d: f64 = k.iter().zip(target).zip(scale).map(|((a, b), s)| ((a - b) / s).powi(2)).sum();
            (d, fi)
        })
        .collect();
    let n = n.min(scored.len());
    if n == 0 {
        return Vec::new();
    }
    scored.select_nth_unstable_by(n - 1, |a, b| a.0.total_cmp(&b.0));
    scored.truncate(n);
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().map(|s| s.1).collect()
}

fn widths_inv(b: &BoxDomain, r: std::ops::Range<usize>) -> Vec<f64> {
    r.map(|c| 1.0 / b.width(c).max(1e-12)).collect()
}

/// Everything a candidate check needs about its neighbourhood.
pub(crate) struct CheckContext<'a> {
    pub g: &'a GraphSpec,
    pub layouts: &'a [NodeLayout],
    /// Latest available state of each node.
    pub states: Vec<Option<&'a NodeState>>,
    pub nlp: &'a NlpConfig,
    /// Search box of the node whose candidates are checked.
    pub own_box: &'a BoxDomain,
}

impl<'a> CheckContext<'a> {
    fn state(&self, j: NodeId) -> Result<&'a NodeState> {
        self.states[j].ok_or(crate::error::Error::MissingNodeState(j))
    }

    fn map(&self, j: NodeId, to: NodeId, calls: &'a AtomicU64) -> Result<EdgeMap<'a>> {
        let st = self.state(j)?;
        if self.nlp.cheap_nodes.contains(&j) {
            return Ok(EdgeMap::Exact { g: self.g, layout: &self.layouts[j], to, calls });
        }
        match st.regressors.get(&to) {
            Some(r) => Ok(EdgeMap::Surrogate(r)),
            None => Ok(EdgeMap::Exact { g: self.g, layout: &self.layouts[j], to, calls }),
        }
    }

    fn scale(&self, j: NodeId) -> Result<Vec<f64>> {
        Ok(self.state(j)?.domain.widths().iter().map(|w| w.max(1e-12)).collect())
    }

    /// Can the in-neighbour `j` deliver the payload found in `x` (node `i`)?
    fn forward_term(&self, i: NodeId, j: NodeId, x: &[f64], calls: &'a AtomicU64, seed: u64) -> Result<(bool, bool)> {
        let li = &self.layouts[i];
        let lj = &self.layouts[j];
        let sj = self.state(j)?;
        let ucols = li.input_cols(j).expect("in-edge");
        let u_target = x[ucols.clone()].to_vec();
        let z = &x[li.z_cols()];
        let mut p = Problem::new(self.nlp.penalty_weight);
        let mut tj = vec![0.0; lj.dim];
        tj[lj.z_cols()].copy_from_slice(z);
        let bj = p.add_block(sj, tj, &fixed_cols(lj, None));
        let i_box = self.own_box;
        p.residuals.push(Residual {
            src: bj,
            map: self.map(j, i, calls)?,
            target: Target::Const(u_target.clone()),
            inv_width: widths_inv(i_box, ucols.clone()),
        });
        let mut siblings = Vec::new();
        if self.nlp.coupling_terms {
            for &k in self.g.out_neighbours(j) {
                if k != i && self.g.position(k) < self.g.position(i) {
                    if let Some(sk) = self.states[k] {
                        let lk = &self.layouts[k];
                        let kc = lk.input_cols(j).expect("in-edge");
                        let mut tk = vec![0.0; lk.dim];
                        tk[lk.z_cols()].copy_from_slice(z);
                        let bk = p.add_block(sk, tk, &fixed_cols(lk, Some(kc.clone())));
                        p.ties.push(Tie { dst: bk, start: kc.start, src: bj, map: self.map(j, k, calls)? });
                        siblings.push((k, bk, kc));
                    }
                }
            }
        }
        // warm starts: j samples whose true image is closest to the target
        let pr = lj.payload_range(i).expect("out-edge");
        let mut key_target = u_target.clone();
        key_target.extend_from_slice(z);
        let mut key_scale: Vec<f64> = widths_inv(i_box, ucols).iter().map(|w| 1.0 / w).collect();
        key_scale.extend(self.scale(j)?[lj.z_cols()].iter());
        let rows = sj.feasible_rows();
        let cand = nearest(sj, self.nlp.n_warm, &key_target, &key_scale, |fi| {
            let mut k = sj.payloads[fi][pr.clone()].to_vec();
            k.extend_from_slice(&sj.samples.row(rows[fi])[lj.z_cols()]);
            k
        });
        let mut warm = Vec::new();
        for fi in cand {
            let xj = sj.samples.row(rows[fi]).to_vec();
            let mut pts = vec![xj.clone()];
            for (k, _, kc) in &siblings {
                let sk = self.state(*k)?;
                let lk = &self.layouts[*k];
                let prk = lj.payload_range(*k).expect("out-edge");
                let tgt = sj.payloads[fi][prk].to_vec();
                let sc = self.scale(*k)?[kc.clone()].to_vec();
                let rk = sk.feasible_rows();
                let best = nearest(sk, 1, &tgt, &sc, |r| sk.samples.row(rk[r])[kc.clone()].to_vec());
                let row = best.first().map(|&r| sk.samples.row(rk[r]).to_vec()).unwrap_or_else(|| {
                    sk.domain.from_unit(&vec![0.5; lk.dim])
                });
                pts.push(row);
            }
            warm.push(p.start_from(&pts));
        }
        Ok(p.feasible(&warm, self.nlp, seed))
    }

    /// Can the out-neighbour `k` accept the payload node `i` produces?
    fn backward_term(
        &self,
        i: NodeId,
        k: NodeId,
        x: &[f64],
        payload: &[f64],
        calls: &'a AtomicU64,
        seed: u64,
    ) -> Result<(bool, bool)> {
        let li = &self.layouts[i];
        let lk = &self.layouts[k];
        let sk = self.state(k)?;
        let z = &x[li.z_cols()];
        let kc = lk.input_cols(i).expect("in-edge");
        let y = &payload[li.payload_range(k).expect("out-edge")];
        let mut tk = vec![0.0; lk.dim];
        tk[kc.clone()].copy_from_slice(y);
        tk[lk.z_cols()].copy_from_slice(z);
        let mut p = Problem::new(self.nlp.penalty_weight);
        let bk = p.add_block(sk, tk, &fixed_cols(lk, Some(kc.clone())));
        let mut coparents = Vec::new();
        if self.nlp.coupling_terms {
            for &j in self.g.in_neighbours(k) {
                if j != i && self.g.position(j) > self.g.position(i) {
                    if let Some(sj) = self.states[j] {
                        let lj = &self.layouts[j];
                        let mut tj = vec![0.0; lj.dim];
                        tj[lj.z_cols()].copy_from_slice(z);
                        let bj = p.add_block(sj, tj, &fixed_cols(lj, None));
                        let jc = lk.input_cols(j).expect("in-edge");
                        p.residuals.push(Residual {
                            src: bj,
                            map: self.map(j, k, calls)?,
                            target: Target::Cols { block: bk, start: jc.start },
                            inv_width: widths_inv(&sk.domain, jc.clone()),
                        });
                        coparents.push((j, jc));
                    }
                }
            }
        }
        let mut key_target = y.to_vec();
        key_target.extend_from_slice(z);
        let sc = self.scale(k)?;
        let mut key_scale = sc[kc.clone()].to_vec();
        key_scale.extend_from_slice(&sc[lk.z_cols()]);
        let rows = sk.feasible_rows();
        let cand = nearest(sk, self.nlp.n_warm, &key_target, &key_scale, |fi| {
            let r = sk.samples.row(rows[fi]);
            let mut key = r[kc.clone()].to_vec();
            key.extend_from_slice(&r[lk.z_cols()]);
            key
        });
        let mut warm = Vec::new();
        for fi in cand {
            let xk = sk.samples.row(rows[fi]).to_vec();
            let mut pts = vec![xk.clone()];
            for (j, jc) in &coparents {
                let sj = self.state(*j)?;
                let lj = &self.layouts[*j];
                let prj = lj.payload_range(k).expect("out-edge");
                let tgt = xk[jc.clone()].to_vec();
                let scj: Vec<f64> = sc[jc.clone()].to_vec();
                let best = nearest(sj, 1, &tgt, &scj, |r| sj.payloads[r][prj.clone()].to_vec());
                let rj = sj.feasible_rows();
                let row = best.first().map(|&r| sj.samples.row(rj[r]).to_vec()).unwrap_or_else(|| {
                    sj.domain.from_unit(&vec![0.5; lj.dim])
                });
                pts.push(row);
            }
            warm.push(p.start_from(&pts));
        }
        Ok(p.feasible(&warm, self.nlp, seed))
    }

    /// Evaluate the node's own constraints, then the enabled neighbour
    /// terms in order, stopping at the first that fails. The payload is the
    /// node's concatenated outgoing payload.
    pub(crate) fn check(&self, i: NodeId, x: &[f64], forward: bool, backward: bool, seed: u64) -> Result<Check> {
        let li = &self.layouts[i];
        let (v, u, z) = li.model_args(x);
        let e = eval_node(self.g, i, v, &u, z)?;
        let payload = li.payload(&e);
        let counts = EvalCounts { constituent_evals: 1, constraint_evals: 1, nlp_solves: 0 };
        let mut out = Check { feasible: e.feasible(), counts, payload, unconverged: 0 };
        if !out.feasible {
            return Ok(out);
        }
        let calls = AtomicU64::new(0);
        let mut tick = 0u64;
        let run = |r: Result<(bool, bool)>, out: &mut Check| -> Result<bool> {
            let (ok, conv) = r?;
            out.counts.nlp_solves += 1;
            if !conv {
                out.unconverged += 1;
            }
            Ok(ok)
        };
        if forward {
            for &j in self.g.in_neighbours(i) {
                tick += 1;
                let r = self.forward_term(i, j, x, &calls, seed.wrapping_add(tick));
                if !run(r, &mut out)? {
                    out.feasible = false;
                    break;
                }
            }
        }
        if backward && out.feasible {
            let payload = out.payload.clone();
            for &k in self.g.out_neighbours(i) {
                tick += 1;
                let r = self.backward_term(i, k, x, &payload, &calls, seed.wrapping_add(tick));
                if !run(r, &mut out)? {
                    out.feasible = false;
                    break;
                }
            }
        }
        out.counts.constituent_evals += calls.load(Ordering::Relaxed);
        Ok(out)
    }
}

/// Outcome of one candidate check.
#[derive(Debug, Clone)]
pub(crate) struct Check {
    pub feasible: bool,
    pub counts: EvalCounts,
    pub payload: Vec<f64>,
    pub unconverged: u64,
}
