//! Nodes whose payloads and constraints are affine in `(v, u)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeEval, NodeModel};

/// Rows `a·v + b·u + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub c: Vec<f64>,
}

impl AffineMap {
    pub fn rows(&self) -> usize {
        self.a.len()
    }

    fn check(&self, n_v: usize, n_u: usize) -> Result<()> {
        for (r, row) in self.a.iter().enumerate() {
            let b_len = self.b.get(r).map_or(0, Vec::len);
            if row.len() != n_v || (b_len != n_u && !(b_len == 0 && n_u == 0)) {
                return Err(Error::Dim { expected: n_v + n_u, got: row.len() + b_len });
            }
        }
        if !self.c.is_empty() && self.c.len() != self.a.len() {
            return Err(Error::Dim { expected: self.a.len(), got: self.c.len() });
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.rows())
            .map(|r| {
                let mut y: f64 = self.a[r].iter().zip(v).map(|(a, x)| a * x).sum();
                if let Some(b) = self.b.get(r) {
                    y += b.iter().zip(u).map(|(b, x)| b * x).sum::<f64>();
                }
                y + self.c.get(r).copied().unwrap_or(0.0)
            })
            .collect()
    }
}

/// Affine node: one map per out-edge (ascending target order) and one map
/// for the constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNode {
    n_u: usize,
    outputs: Vec<AffineMap>,
    constraints: AffineMap,
}

impl AffineNode {
    pub fn new(n_v: usize, n_u: usize, outputs: Vec<AffineMap>, constraints: AffineMap) -> Result<Self> {
        for m in outputs.iter().chain(std::iter::once(&constraints)) {
            m.check(n_v, n_u)?;
        }
        Ok(Self { n_u, outputs, constraints })
    }
}

impl NodeModel for AffineNode {
    fn input_dim(&self) -> usize {
        self.n_u
    }
    fn output_dims(&self) -> Vec<usize> {
        self.outputs.iter().map(AffineMap::rows).collect()
    }
    fn n_constraints(&self) -> usize {
        self.constraints.rows()
    }
    fn evaluate(&self, v: &[f64], u: &[f64], _z: &[f64]) -> Result<NodeEval> {
        Ok(NodeEval {
            outputs: self.outputs.iter().map(|m| m.apply(v, u)).collect(),
            constraints: self.constraints.apply(v, u),
        })
    }
}
