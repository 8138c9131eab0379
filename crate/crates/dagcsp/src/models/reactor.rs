//! Two batch reactors in series running 2A -> B -> C with Arrhenius kinetics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domains::BoxDomain;
use crate::error::{Error, Result};
use crate::graph::{build_graph, EdgeSpec, FnModel, GraphSpec, NodeEval, NodeSpec};

/// Gas constant in kJ mol⁻¹ K⁻¹.
pub const GAS_CONSTANT: f64 = 8.314e-3;

/// Fixed-step steps are raised above the default count until
/// `h · λ ≤ STIFF_STEP`, with λ a bound on the Jacobian spectral radius.
pub const STIFF_STEP: f64 = 0.5;
pub const DEFAULT_STEPS: usize = 200;

pub fn arrhenius(k0: f64, e: f64, t: f64) -> Result<f64> {
    if t <= 0.0 || !t.is_finite() {
        return Err(Error::NonpositiveTemperature(t));
    }
    Ok(k0 * (-e / (GAS_CONSTANT * t)).exp())
}

/// Classical RK4 with `n_steps` equal steps on `[0, t_end]`.
pub fn rk4_integrate<F>(rhs: F, x0: &[f64], t_end: f64, n_steps: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("rk4 needs at least one step".into()));
    }
    let n = x0.len();
    let h = t_end / n_steps as f64;
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..n_steps {
        rhs(&x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(&tmp, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(h * (step + 1) as f64));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReactorParams {
    /// Pre-exponential factors `[reactor][reaction]`, m³ kmol⁻¹ min⁻¹.
    pub k0: [[f64; 2]; 2],
    /// Activation energies `[reactor][reaction]`, kJ mol⁻¹.
    pub activation: [[f64; 2]; 2],
    /// Initial concentrations of A, B, C in the first reactor.
    pub c0: [f64; 3],
    /// Upper bound on the C fraction leaving reactor 1.
    pub c_purity_max: f64,
    /// Lower bound on the B fraction leaving reactor 2.
    pub b_purity_min: f64,
    pub batch_time: (f64, f64),
    pub temperature: (f64, f64),
}

impl Default for ReactorParams {
    fn default() -> Self {
        Self {
            k0: [[1.66e-4, 0.50], [9.66e-3, 5.03]],
            activation: [[1.50, 5.00], [2.50, 5.00]],
            c0: [2.0, 0.0, 0.0],
            c_purity_max: 0.240,
            b_purity_min: 0.825,
            batch_time: (300.0, 900.0),
            temperature: (300.0, 700.0),
        }
    }
}

impl ReactorParams {
    /// Same kinetics with purity targets that the kinetics can reach
    /// (joint feasible fraction around one percent).
    pub fn reachable_targets() -> Self {
        Self { c_purity_max: 0.12, b_purity_min: 4.25e-4, ..Self::default() }
    }

    /// Endpoint concentrations of reactor `j` after batch time `tau` at
    /// temperature `temp`, starting from `c_init`.
    pub fn run_batch(&self, j: usize, tau: f64, temp: f64, c_init: [f64; 3]) -> Result<[f64; 3]> {
        let k1 = arrhenius(self.k0[j][0], self.activation[j][0], temp)?;
        let k2 = arrhenius(self.k0[j][1], self.activation[j][1], temp)?;
        let lambda = 4.0 * k1 * c_init[0].abs() + k2;
        let n = DEFAULT_STEPS.max((tau.abs() * lambda / STIFF_STEP).ceil() as usize);
        let rhs = |c: &[f64], d: &mut [f64]| {
            let r1 = k1 * c[0] * c[0];
            let r2 = k2 * c[1];
            d[0] = -2.0 * r1;
            d[1] = r1 - r2;
            d[2] = r2;
        };
        let x = rk4_integrate(rhs, &c_init, tau, n)?;
        Ok([x[0], x[1], x[2]])
    }
}

fn fraction(c: &[f64; 3], k: usize) -> f64 {
    let total = c[0] + c[1] + c[2];
    if total.abs() < 1e-300 {
        return 0.0;
    }
    c[k] / total
}

pub fn reactor_graph() -> GraphSpec {
    reactor_graph_with(ReactorParams::default())
}

pub fn reactor_graph_with(params: ReactorParams) -> GraphSpec {
    let p = Arc::new(params);
    let b = BoxDomain::new(
        vec![p.batch_time.0, p.temperature.0],
        vec![p.batch_time.1, p.temperature.1],
    )
    .expect("ordered reactor bounds");
    let p1 = p.clone();
    let first = FnModel::new(0, vec![2], 1, move |v, _, _| {
        let c = p1.run_batch(0, v[0], v[1], p1.c0)?;
        Ok(NodeEval { outputs: vec![vec![c[0], c[1]]], constraints: vec![fraction(&c, 2) - p1.c_purity_max] })
    });
    let p2 = p.clone();
    let second = FnModel::new(2, vec![], 1, move |v, u, _| {
        let c = p2.run_batch(1, v[0], v[1], [u[0], u[1], 0.0])?;
        Ok(NodeEval { outputs: vec![], constraints: vec![p2.b_purity_min - fraction(&c, 1)] })
    });
    let nodes = vec![
        NodeSpec { id: 0, name: "reactor1".into(), param_box: b.clone(), model: Arc::new(first) },
        NodeSpec { id: 1, name: "reactor2".into(), param_box: b, model: Arc::new(second) },
    ];
    build_graph(nodes, vec![EdgeSpec { from: 0, to: 1, dim: 2 }], None).expect("valid reactor graph")
}
