//! Built-in case studies and verification oracles.

pub mod affine;
mod funcapprox;
mod linear;
mod oracle;
mod reactor;
mod sip;

pub use affine::{AffineMap, AffineNode};
pub use funcapprox::{approximator_graph, approximator_value, coupling_box, nonconvex_target};
pub use linear::{linear_example_graph, INPUT_WEIGHT};
pub use oracle::{brute_force_oracle, MAX_ORACLE_DIM};
pub use reactor::{arrhenius, reactor_graph, reactor_graph_with, rk4_integrate, ReactorParams, GAS_CONSTANT};
pub use sip::{fit_joint_classifier, sip_solve, smallest_error_starts, SipConfig, SipResult};

use crate::error::{Error, Result};
use crate::graph::GraphSpec;

/// Case studies addressable by name. `reactors-reachable` keeps the reactor
/// kinetics but uses purity targets the kinetics can meet.
pub const CASE_NAMES: [&str; 4] = ["linear5", "reactors", "reactors-reachable", "funcapprox"];

pub fn case_graph(name: &str) -> Result<GraphSpec> {
    match name {
        "linear5" => Ok(linear_example_graph()),
        "reactors" => Ok(reactor_graph()),
        "reactors-reachable" => Ok(reactor_graph_with(ReactorParams::reachable_targets())),
        "funcapprox" => Ok(approximator_graph()),
        other => Err(Error::InvalidArgument(format!("unknown case {other:?}"))),
    }
}
