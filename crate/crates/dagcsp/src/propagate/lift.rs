//! Coupling lifts and the column layout of node subproblems.

use std::ops::Range;
use std::sync::Arc;

use crate::domains::{ColumnRole, RoleSpan};
use crate::error::{Error, Result};
use crate::graph::{EdgeSpec, GraphSpec, NodeEval, NodeId, NodeModel, NodeSpec};

/// Wraps a node so every incoming payload carries a trailing copy of the
/// coupling vector and every outgoing payload forwards it.
struct LiftedModel {
    inner: Arc<dyn NodeModel>,
    in_dims: Vec<usize>,
    nz: usize,
}

impl NodeModel for LiftedModel {
    fn input_dim(&self) -> usize {
        self.inner.input_dim() + self.nz * self.in_dims.len()
    }
    fn output_dims(&self) -> Vec<usize> {
        self.inner.output_dims().into_iter().map(|d| d + self.nz).collect()
    }
    fn n_constraints(&self) -> usize {
        self.inner.n_constraints()
    }
    fn evaluate(&self, v: &[f64], u: &[f64], z: &[f64]) -> Result<NodeEval> {
        let mut stripped = Vec::with_capacity(self.inner.input_dim());
        let mut at = 0;
        for &d in &self.in_dims {
            stripped.extend_from_slice(&u[at..at + d]);
            at += d + self.nz;
        }
        let mut e = self.inner.evaluate(v, &stripped, z)?;
        for y in &mut e.outputs {
            y.extend_from_slice(z);
        }
        Ok(e)
    }
}

/// Give every node a local copy of the coupling vector, forwarded along all
/// edges by identity.
pub fn lift_coupling(g: &GraphSpec) -> Result<GraphSpec> {
    let c = g.coupling.as_ref().ok_or(Error::MissingCouplingBox)?;
    if g.lifted {
        return Ok(g.clone());
    }
    let nz = c.bounds.dim();
    let nodes = g
        .nodes
        .iter()
        .map(|n| NodeSpec {
            model: Arc::new(LiftedModel {
                inner: n.model.clone(),
                in_dims: g.in_neighbours(n.id).iter().map(|&j| g.edge(j, n.id).dim).collect(),
                nz,
            }),
            ..n.clone()
        })
        .collect();
    let edges = g.edges.iter().map(|e| EdgeSpec { dim: e.dim + nz, ..*e }).collect();
    let lifted = g.with_nodes(nodes, edges, true);
    lifted.check_dims(nz)?;
    Ok(lifted)
}

/// Columns of a node subproblem: `[v | u per in-edge | z]`. Incoming
/// payloads are stored without their coupling copies, which always equal
/// the node's own `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout {
    pub node: NodeId,
    pub n_v: usize,
    /// `(source, first column, width)` per in-edge, ascending source.
    pub inputs: Vec<(NodeId, usize, usize)>,
    /// `(target, width)` per out-edge, ascending target.
    pub outputs: Vec<(NodeId, usize)>,
    pub z_start: usize,
    pub nz: usize,
    pub n_error: usize,
    pub dim: usize,
}

impl NodeLayout {
    pub fn new(g: &GraphSpec, i: NodeId) -> Self {
        let (nz, n_error) = match (&g.coupling, g.lifted) {
            (Some(c), true) => (c.bounds.dim(), c.n_error),
            _ => (0, 0),
        };
        let n_v = g.node(i).param_box.dim();
        let mut at = n_v;
        let mut inputs = Vec::new();
        for &j in g.in_neighbours(i) {
            let w = g.edge(j, i).dim - nz;
            inputs.push((j, at, w));
            at += w;
        }
        let outputs = g.out_neighbours(i).iter().map(|&k| (k, g.edge(i, k).dim - nz)).collect();
        Self { node: i, n_v, inputs, outputs, z_start: at, nz, n_error, dim: at + nz }
    }

    pub fn all(g: &GraphSpec) -> Vec<NodeLayout> {
        (0..g.n_nodes()).map(|i| NodeLayout::new(g, i)).collect()
    }

    pub fn input_cols(&self, from: NodeId) -> Option<Range<usize>> {
        self.inputs.iter().find(|t| t.0 == from).map(|t| t.1..t.1 + t.2)
    }

    pub fn u_cols(&self) -> Range<usize> {
        self.n_v..self.z_start
    }

    pub fn z_cols(&self) -> Range<usize> {
        self.z_start..self.dim
    }

    /// Position of the payload for `to` within the concatenated payload.
    pub fn payload_range(&self, to: NodeId) -> Option<Range<usize>> {
        let mut at = 0;
        for &(k, w) in &self.outputs {
            if k == to {
                return Some(at..at + w);
            }
            at += w;
        }
        None
    }

    pub fn payload_dim(&self) -> usize {
        self.outputs.iter().map(|o| o.1).sum()
    }

    pub fn roles(&self) -> Vec<RoleSpan> {
        let mut r = Vec::new();
        if self.n_v > 0 {
            r.push(RoleSpan { role: ColumnRole::Param(self.node), start: 0, len: self.n_v });
        }
        for &(j, start, len) in &self.inputs {
            r.push(RoleSpan { role: ColumnRole::Input { from: j, to: self.node }, start, len });
        }
        let n_lift = self.nz - self.n_error;
        if n_lift > 0 {
            r.push(RoleSpan { role: ColumnRole::Lift, start: self.z_start, len: n_lift });
        }
        if self.n_error > 0 {
            r.push(RoleSpan { role: ColumnRole::ErrorLift, start: self.z_start + n_lift, len: self.n_error });
        }
        r
    }

    /// Arguments `(v, u, z)` of the node model for a subproblem point.
    pub fn model_args<'a>(&self, x: &'a [f64]) -> (&'a [f64], Vec<f64>, &'a [f64]) {
        let z = &x[self.z_start..self.dim];
        let mut u = Vec::with_capacity(self.z_start - self.n_v + self.nz * self.inputs.len());
        for &(_, start, len) in &self.inputs {
            u.extend_from_slice(&x[start..start + len]);
            u.extend_from_slice(z);
        }
        (&x[..self.n_v], u, z)
    }

    /// Concatenated outgoing payloads without coupling copies.
    pub fn payload(&self, e: &NodeEval) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.payload_dim());
        for (y, &(_, w)) in e.outputs.iter().zip(&self.outputs) {
            p.extend_from_slice(&y[..w]);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::BoxDomain;
    use crate::graph::{build_graph, Coupling, FnModel};
    use crate::models::approximator_graph;

    #[test]
    fn approximator_lift_dims() {
        let g = approximator_graph();
        let l = lift_coupling(&g).unwrap();
        assert!(l.lifted);
        let dims: Vec<usize> = NodeLayout::all(&l).iter().map(|x| x.dim).collect();
        assert_eq!(dims, vec![4, 5, 5, 5, 6, 8]);
        for e in &l.edges {
            assert_eq!(e.dim, 4);
        }
        let lay = NodeLayout::new(&l, 5);
        let hdr: Vec<String> = lay.roles().iter().map(|r| r.role.to_string()).collect();
        assert_eq!(hdr, vec!["u0>5", "u1>5", "u2>5", "u3>5", "u4>5", "z", "eps"]);
    }

    #[test]
    fn lifted_evaluation_matches_plain() {
        let g = approximator_graph();
        let l = lift_coupling(&g).unwrap();
        let z = [0.3, 0.1, 0.05];
        let e = l.node(3).model.evaluate(&[0.5, -0.2], &[], &z).unwrap();
        assert_eq!(e.outputs[0], vec![0.5 * 0.3 - 0.2 * 0.1, 0.3, 0.1, 0.05]);
        let lay = NodeLayout::new(&l, 5);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.3, 0.1, 0.05];
        let (v, u, zz) = lay.model_args(&x);
        assert!(v.is_empty());
        assert_eq!(u.len(), 20);
        let lifted = l.node(5).model.evaluate(v, &u, zz).unwrap();
        let plain = g.node(5).model.evaluate(&[], &x[..5], &z).unwrap();
        assert_eq!(lifted, plain);
    }

    #[test]
    fn missing_coupling_and_single_node() {
        let g = crate::models::linear_example_graph();
        assert!(matches!(lift_coupling(&g), Err(Error::MissingCouplingBox)));
        let node = NodeSpec {
            id: 0,
            name: "solo".into(),
            param_box: BoxDomain::cube(2, 0.0, 1.0),
            model: Arc::new(FnModel::new(0, vec![], 1, |v, _, z| {
                Ok(NodeEval { outputs: vec![], constraints: vec![v[0] - z[0]] })
            })),
        };
        let c = Coupling { bounds: BoxDomain::cube(1, 0.0, 1.0), n_error: 0 };
        let g = build_graph(vec![node], vec![], Some(c)).unwrap();
        let l = lift_coupling(&g).unwrap();
        assert_eq!(NodeLayout::new(&l, 0).dim, 3);
    }
}
