//! Brute-force labelling of the joint search box.

use rayon::prelude::*;

use crate::domains::{SampleSet, FEASIBLE, INFEASIBLE};
use crate::error::{Error, Result};
use crate::graph::GraphSpec;
use crate::reconstruct::{evaluate_composite, joint_box, joint_roles};
use crate::samplers::ShiftedSobol;

pub const MAX_ORACLE_DIM: usize = 14;

/// Label `n_points` shifted Sobol points of the joint box by evaluating the
/// whole graph at each.
pub fn brute_force_oracle(g: &GraphSpec, n_points: usize, seed: u64) -> Result<SampleSet> {
    let b = joint_box(g);
    let d = b.dim();
    if d > MAX_ORACLE_DIM {
        return Err(Error::DimensionGuard { dim: d, max: MAX_ORACLE_DIM });
    }
    let seq = ShiftedSobol::new(d, seed)?;
    let np = g.param_dim();
    let rows: Vec<(Vec<f64>, bool)> = (0..n_points as u64)
        .into_par_iter()
        .map(|k| {
            let x = b.from_unit(&seq.point(k));
            let ok = evaluate_composite(g, &x[..np], &x[np..])?.feasible();
            Ok((x, ok))
        })
        .collect::<Result<_>>()?;
    let mut out = SampleSet::new(d, joint_roles(g));
    for (x, ok) in rows {
        out.push(&x, if ok { FEASIBLE } else { INFEASIBLE })?;
    }
    out.n_evaluations = n_points as u64 * g.n_nodes() as u64;
    Ok(out)
}
