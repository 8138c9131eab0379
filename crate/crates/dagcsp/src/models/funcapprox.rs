//! Approximating a nonconvex function of `z` by a sum of basis terms, one
//! node per term, with a summation node carrying the error bound.

use std::sync::Arc;

use crate::domains::BoxDomain;
use crate::graph::{build_graph, Coupling, EdgeSpec, FnModel, GraphSpec, NodeEval, NodeSpec};

/// `Σ (z_m³ − z_m²) − Σ_{m<n} z_m z_n`.
pub fn nonconvex_target(z: &[f64]) -> f64 {
    let mut f: f64 = z.iter().map(|x| x * x * x - x * x).sum();
    for m in 0..z.len() {
        for n in m + 1..z.len() {
            f -= z[m] * z[n];
        }
    }
    f
}

pub fn coupling_box() -> BoxDomain {
    BoxDomain::new(vec![-0.5, 0.0, 0.0], vec![1.0, 0.3, 0.25]).expect("ordered bounds")
}

fn term(id: usize, name: &str, n_v: usize, lo: f64, hi: f64, f: fn(&[f64], &[f64]) -> f64) -> NodeSpec {
    NodeSpec {
        id,
        name: name.into(),
        param_box: BoxDomain::cube(n_v, lo, hi),
        model: Arc::new(FnModel::new(0, vec![1], 0, move |v, _, z| {
            Ok(NodeEval { outputs: vec![vec![f(v, &z[..2])]], constraints: vec![] })
        })),
    }
}

fn ln1p_sum(v: &[f64], z: &[f64], sign: f64, weight_z: bool) -> f64 {
    (0..2).map(|m| sign * v[m] * if weight_z { z[m] } else { 1.0 } * z[m].ln_1p()).sum()
}

/// Basis value `zᵀLLᵀz + pᵀz + Σ z_m S_m ln(z_m+1) − Σ T_m ln(z_m+1) + c`
/// for parameters stacked as `[c, T1, T2, S1, S2, p1, p2, L11, L21, L22]`.
pub fn approximator_value(v: &[f64], z: &[f64]) -> f64 {
    let q1 = v[7] * z[0] + v[8] * z[1];
    let q2 = v[9] * z[1];
    v[0] + ln1p_sum(&v[1..3], z, -1.0, false) + ln1p_sum(&v[3..5], z, 1.0, true) + v[5] * z[0] + v[6] * z[1]
        + q1 * q1
        + q2 * q2
}

/// Unlifted graph; coupling is `(z1, z2, ε)` with one error coordinate.
pub fn approximator_graph() -> GraphSpec {
    let mut nodes = vec![
        term(0, "constant", 1, -1.0, 1.0, |v, _| v[0]),
        term(1, "log", 2, 0.0, 1.0, |v, z| ln1p_sum(v, z, -1.0, false)),
        term(2, "zlog", 2, 0.0, 1.0, |v, z| ln1p_sum(v, z, 1.0, true)),
        term(3, "linear", 2, -1.0, 1.0, |v, z| v[0] * z[0] + v[1] * z[1]),
        term(4, "quadratic", 3, -1.0, 1.0, |v, z| {
            let q1 = v[0] * z[0] + v[1] * z[1];
            let q2 = v[2] * z[1];
            q1 * q1 + q2 * q2
        }),
    ];
    nodes.push(NodeSpec {
        id: 5,
        name: "mismatch".into(),
        param_box: BoxDomain::empty(),
        model: Arc::new(FnModel::new(5, vec![], 1, |_, u, z| {
            let approx: f64 = u.iter().sum();
            Ok(NodeEval { outputs: vec![], constraints: vec![(approx - nonconvex_target(&z[..2])).abs() - z[2]] })
        })),
    });
    let edges = (0..5).map(|i| EdgeSpec { from: i, to: 5, dim: 1 }).collect();
    build_graph(nodes, edges, Some(Coupling { bounds: coupling_box(), n_error: 1 })).expect("valid graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn target_values() {
        assert_eq!(nonconvex_target(&[0.0, 0.0]), 0.0);
        assert_eq!(nonconvex_target(&[1.0, 1.0]), -1.0);
        assert_eq!(nonconvex_target(&[1.0, 0.0]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (a, b): (f64, f64) = (rng.gen_range(-0.5..1.0), rng.gen_range(0.0..0.3));
            let direct = a.powi(3) - a.powi(2) + b.powi(3) - b.powi(2) - a * b;
            assert!((nonconvex_target(&[a, b]) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn node_sum_matches_basis() {
        let g = approximator_graph();
        assert_eq!(g.param_dim(), 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let v: Vec<f64> = g.param_box().from_unit(&(0..10).map(|_| rng.gen()).collect::<Vec<_>>());
            let z = [rng.gen_range(-0.5..1.0), rng.gen_range(0.0..0.3), 0.1];
            let mut sum = 0.0;
            for i in 0..5 {
                let off = g.param_offset(i);
                let e = g.node(i).model.evaluate(&v[off..off + g.node(i).param_box.dim()], &[], &z).unwrap();
                sum += e.outputs[0][0];
            }
            assert!((sum - approximator_value(&v, &z)).abs() < 1e-12);
        }
    }

    #[test]
    fn central_point_is_coverable() {
        let z = [0.25, 0.15, 0.25];
        let mut v = vec![0.0; 10];
        v[0] = -0.1;
        let u: Vec<f64> = vec![approximator_value(&v, &z), 0.0, 0.0, 0.0, 0.0];
        let g = approximator_graph();
        let e = g.node(5).model.evaluate(&[], &u, &z).unwrap();
        assert!(e.feasible(), "{:?}", e.constraints);
    }
}
