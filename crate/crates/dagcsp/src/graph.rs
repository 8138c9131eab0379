//! Directed acyclic constraint graphs: nodes, edges and precedence order.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::domains::BoxDomain;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Result of one evaluation of a node's function bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEval {
    /// One payload per out-edge, ordered by ascending target id.
    pub outputs: Vec<Vec<f64>>,
    /// Constraint values; the node is feasible when all are ≤ 0.
    pub constraints: Vec<f64>,
}

impl NodeEval {
    pub fn max_violation(&self) -> f64 {
        self.constraints.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn feasible(&self) -> bool {
        self.constraints.iter().all(|&g| g <= 0.0)
    }
}

/// Black-box node functions `(v, u, z) -> (outputs, constraints)`.
///
/// `u` is the concatenation of incoming payloads ordered by ascending source
/// id. `z` is the shared coupling vector, empty for graphs without one.
/// Implementations must be deterministic.
pub trait NodeModel: Send + Sync {
    fn input_dim(&self) -> usize;
    /// Payload dimensions, one per out-edge in ascending target order.
    fn output_dims(&self) -> Vec<usize>;
    fn n_constraints(&self) -> usize;
    fn evaluate(&self, v: &[f64], u: &[f64], z: &[f64]) -> Result<NodeEval>;
}

type NodeFn = dyn Fn(&[f64], &[f64], &[f64]) -> Result<NodeEval> + Send + Sync;

/// Node model backed by a closure.
pub struct FnModel {
    input_dim: usize,
    output_dims: Vec<usize>,
    n_constraints: usize,
    f: Box<NodeFn>,
}

impl FnModel {
    pub fn new<F>(input_dim: usize, output_dims: Vec<usize>, n_constraints: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64]) -> Result<NodeEval> + Send + Sync + 'static,
    {
        Self { input_dim, output_dims, n_constraints, f: Box::new(f) }
    }
}

impl NodeModel for FnModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn output_dims(&self) -> Vec<usize> {
        self.output_dims.clone()
    }
    fn n_constraints(&self) -> usize {
        self.n_constraints
    }
    fn evaluate(&self, v: &[f64], u: &[f64], z: &[f64]) -> Result<NodeEval> {
        (self.f)(v, u, z)
    }
}

#[derive(Clone)]
pub struct NodeSpec {
    pub id: NodeId,
    pub name: String,
    pub param_box: BoxDomain,
    pub model: Arc<dyn NodeModel>,
}

impl fmt::Debug for NodeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeSpec")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("param_box", &self.param_box)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub dim: usize,
}

/// Shared parameters coupling several nodes. The trailing `n_error`
/// coordinates are approximation-error variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub bounds: BoxDomain,
    pub n_error: usize,
}

#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
    pub coupling: Option<Coupling>,
    /// Whether every edge carries a copy of the coupling vector.
    pub lifted: bool,
    in_nbrs: Vec<Vec<NodeId>>,
    out_nbrs: Vec<Vec<NodeId>>,
    order: Vec<NodeId>,
    position: Vec<usize>,
}

/// Validate nodes and edges and cache neighbourhoods and precedence order.
pub fn build_graph(
    nodes: Vec<NodeSpec>,
    edges: Vec<EdgeSpec>,
    coupling: Option<Coupling>,
) -> Result<GraphSpec> {
    let n = nodes.len();
    for (k, node) in nodes.iter().enumerate() {
        if node.id != k {
            return Err(Error::UnknownNode(node.id));
        }
    }
    let mut seen = BTreeSet::new();
    for e in &edges {
        if e.from >= n {
            return Err(Error::UnknownNode(e.from));
        }
        if e.to >= n {
            return Err(Error::UnknownNode(e.to));
        }
        if e.from == e.to {
            return Err(Error::CycleDetected(vec![e.from]));
        }
        if e.dim == 0 {
            return Err(Error::DimensionMismatch {
                from: e.from,
                to: e.to,
                reason: "edge dimension must be positive".into(),
            });
        }
        if !seen.insert((e.from, e.to)) {
            return Err(Error::DimensionMismatch {
                from: e.from,
                to: e.to,
                reason: "duplicate edge".into(),
            });
        }
    }
    let mut in_nbrs = vec![Vec::new(); n];
    let mut out_nbrs = vec![Vec::new(); n];
    for e in &edges {
        in_nbrs[e.to].push(e.from);
        out_nbrs[e.from].push(e.to);
    }
    for l in in_nbrs.iter_mut().chain(out_nbrs.iter_mut()) {
        l.sort_unstable();
    }
    let order = kahn(n, &in_nbrs, &out_nbrs)?;
    let mut position = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        position[i] = p;
    }
    let mut g = GraphSpec {
        nodes,
        edges,
        coupling,
        lifted: false,
        in_nbrs,
        out_nbrs,
        order,
        position,
    };
    g.edges.sort_by_key(|e| (e.from, e.to));
    g.check_dims(0)?;
    Ok(g)
}

fn kahn(n: usize, in_nbrs: &[Vec<NodeId>], out_nbrs: &[Vec<NodeId>]) -> Result<Vec<NodeId>> {
    let mut indeg: Vec<usize> = in_nbrs.iter().map(Vec::len).collect();
    let mut ready: BTreeSet<NodeId> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &k in &out_nbrs[i] {
            indeg[k] -= 1;
            if indeg[k] == 0 {
                ready.insert(k);
            }
        }
    }
    if order.len() < n {
        let stuck: Vec<NodeId> = (0..n).filter(|&i| indeg[i] > 0).collect();
        return Err(Error::CycleDetected(stuck));
    }
    Ok(order)
}

impl GraphSpec {
    /// Check model signatures against edges. `lift` is the number of extra
    /// coordinates appended to every edge payload.
    pub(crate) fn check_dims(&self, lift: usize) -> Result<()> {
        for node in &self.nodes {
            let i = node.id;
            let u_dim: usize = self.in_nbrs[i].iter().map(|&j| self.edge(j, i).dim).sum();
            if node.model.input_dim() != u_dim {
                let from = self.in_nbrs[i].first().copied().unwrap_or(i);
                return Err(Error::DimensionMismatch {
                    from,
                    to: i,
                    reason: format!(
                        "node {i} expects {} inputs, incoming edges carry {u_dim}",
                        node.model.input_dim()
                    ),
                });
            }
            let outs = node.model.output_dims();
            if outs.len() != self.out_nbrs[i].len() {
                return Err(Error::DimensionMismatch {
                    from: i,
                    to: self.out_nbrs[i].first().copied().unwrap_or(i),
                    reason: format!(
                        "node {i} produces {} payloads for {} out-edges",
                        outs.len(),
                        self.out_nbrs[i].len()
                    ),
                });
            }
            for (d, &k) in outs.iter().zip(&self.out_nbrs[i]) {
                if *d != self.edge(i, k).dim || *d < lift {
                    return Err(Error::DimensionMismatch {
                        from: i,
                        to: k,
                        reason: format!("payload has {d} entries, edge declares {}", self.edge(i, k).dim),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: NodeId) -> &NodeSpec {
        &self.nodes[i]
    }

    pub fn in_neighbours(&self, i: NodeId) -> &[NodeId] {
        &self.in_nbrs[i]
    }

    pub fn out_neighbours(&self, i: NodeId) -> &[NodeId] {
        &self.out_nbrs[i]
    }

    pub fn edge(&self, from: NodeId, to: NodeId) -> &EdgeSpec {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .expect("edge exists")
    }

    /// Number of coordinates of the coupling vector (0 without coupling).
    pub fn coupling_dim(&self) -> usize {
        self.coupling.as_ref().map_or(0, |c| c.bounds.dim())
    }

    /// Payload dimension of an edge excluding the lifted coupling copy.
    pub fn payload_dim(&self, from: NodeId, to: NodeId) -> usize {
        let d = self.edge(from, to).dim;
        if self.lifted {
            d - self.coupling_dim()
        } else {
            d
        }
    }

    /// Position of the out-edge `i -> k` among `i`'s payloads.
    pub fn out_slot(&self, i: NodeId, k: NodeId) -> usize {
        self.out_nbrs[i].iter().position(|&t| t == k).expect("out-edge exists")
    }

    /// Offset of the block from `j` within node `i`'s input vector.
    pub fn in_offset(&self, i: NodeId, j: NodeId) -> usize {
        self.in_nbrs[i]
            .iter()
            .take_while(|&&p| p != j)
            .map(|&p| self.edge(p, i).dim)
            .sum()
    }

    pub fn input_dim(&self, i: NodeId) -> usize {
        self.in_nbrs[i].iter().map(|&j| self.edge(j, i).dim).sum()
    }

    pub fn topological_order(&self) -> &[NodeId] {
        &self.order
    }

    /// Rank of a node in the precedence order.
    pub fn position(&self, i: NodeId) -> usize {
        self.position[i]
    }

    pub fn roots_and_leaves(&self) -> (Vec<NodeId>, Vec<NodeId>) {
        let roots = (0..self.n_nodes()).filter(|&i| self.in_nbrs[i].is_empty()).collect();
        let leaves = (0..self.n_nodes()).filter(|&i| self.out_nbrs[i].is_empty()).collect();
        (roots, leaves)
    }

    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.n_nodes();
        let mut a = vec![vec![0u8; n]; n];
        for e in &self.edges {
            a[e.from][e.to] = 1;
        }
        a
    }

    /// Total number of local parameters.
    pub fn param_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.param_box.dim()).sum()
    }

    /// Offset of node `i`'s parameters within the stacked parameter vector.
    pub fn param_offset(&self, i: NodeId) -> usize {
        self.nodes[..i].iter().map(|n| n.param_box.dim()).sum()
    }

    /// Box over all local parameters stacked by node id.
    pub fn param_box(&self) -> BoxDomain {
        let boxes: Vec<&BoxDomain> = self.nodes.iter().map(|n| &n.param_box).collect();
        crate::domains::box_product(&boxes)
    }

    /// Nodes reached in a breadth-first walk from `i` along out-edges.
    pub fn descendants(&self, i: NodeId) -> Vec<NodeId> {
        let mut seen = vec![false; self.n_nodes()];
        let mut q = VecDeque::from([i]);
        let mut out = Vec::new();
        while let Some(j) = q.pop_front() {
            for &k in &self.out_nbrs[j] {
                if !seen[k] {
                    seen[k] = true;
                    out.push(k);
                    q.push_back(k);
                }
            }
        }
        out
    }

    pub(crate) fn with_nodes(&self, nodes: Vec<NodeSpec>, edges: Vec<EdgeSpec>, lifted: bool) -> GraphSpec {
        let mut g = self.clone();
        g.nodes = nodes;
        g.edges = edges;
        g.edges.sort_by_key(|e| (e.from, e.to));
        g.lifted = lifted;
        g
    }
}
