//! Five-node affine example: nodes 0 and 1 feed node 2, which feeds the
//! leaves 3 and 4. Every node requires its outputs to be non-positive.

use std::sync::Arc;

use super::affine::{AffineMap, AffineNode};
use crate::domains::BoxDomain;
use crate::graph::{build_graph, EdgeSpec, GraphSpec, NodeSpec};

fn map(a: &[f64], b: &[f64]) -> AffineMap {
    AffineMap { a: vec![a.to_vec()], b: vec![b.to_vec()], c: vec![0.0] }
}

fn stack(maps: &[&AffineMap]) -> AffineMap {
    AffineMap {
        a: maps.iter().flat_map(|m| m.a.clone()).collect(),
        b: maps.iter().flat_map(|m| m.b.clone()).collect(),
        c: maps.iter().flat_map(|m| m.c.clone()).collect(),
    }
}

/// Coupling weight applied to every incoming payload.
pub const INPUT_WEIGHT: f64 = 0.1;

pub fn linear_example_graph() -> GraphSpec {
    let w = INPUT_WEIGHT;
    let y02 = map(&[1.0, -1.0], &[]);
    let y12 = map(&[0.5, 0.5], &[]);
    let y23 = map(&[1.0, 0.5], &[w, w]);
    let y24 = map(&[-0.5, 1.0], &[w, w]);
    let g3 = map(&[1.0, 1.0], &[w]);
    let g4 = map(&[1.0, -0.5], &[w]);
    let node = |id: usize, n_u: usize, outs: Vec<AffineMap>, g: AffineMap| NodeSpec {
        id,
        name: format!("node{}", id + 1),
        param_box: BoxDomain::cube(2, -1.0, 1.0),
        model: Arc::new(AffineNode::new(2, n_u, outs, g).expect("consistent affine maps")),
    };
    let nodes = vec![
        node(0, 0, vec![y02.clone()], y02),
        node(1, 0, vec![y12.clone()], y12),
        node(2, 2, vec![y23.clone(), y24.clone()], stack(&[&y23, &y24])),
        node(3, 1, vec![], g3),
        node(4, 1, vec![], g4),
    ];
    let edges = [(0, 2), (1, 2), (2, 3), (2, 4)]
        .into_iter()
        .map(|(from, to)| EdgeSpec { from, to, dim: 1 })
        .collect();
    build_graph(nodes, edges, None).expect("valid example graph")
}
