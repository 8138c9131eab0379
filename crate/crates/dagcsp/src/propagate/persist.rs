//! On-disk layout of a propagation state:
//!
//! ```text
//! state.json
//! pass0_f/samples/node{i}.csv
//! pass0_f/classifiers/node{i}.json
//! pass0_f/regressors/node{i}.json
//! pass0_f/nodes/node{i}.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NodeDiagnostics, NodeState, PropagationState};
use crate::domains::{BoxDomain, SampleSet};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::samplers::EvalCounts;
use crate::surrogates::{CvReport, KrrRegressor, SvmClassifier};

#[derive(Serialize, Deserialize)]
struct StateFile {
    directions: String,
    n_nodes: usize,
    backward_domains: Option<Vec<BoxDomain>>,
    domain_counts: EvalCounts,
    counts: EvalCounts,
    lifted: bool,
    terminal: NodeId,
    graph_fingerprint: String,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct NodeFile {
    node: NodeId,
    direction_tag: String,
    domain: BoxDomain,
    input_box: BoxDomain,
    payloads: Vec<Vec<f64>>,
    classifier_report: Option<CvReport>,
    regressor_reports: BTreeMap<NodeId, CvReport>,
    counts: EvalCounts,
    diagnostics: NodeDiagnostics,
}

fn pass_dir(dir: &Path, p: usize, tag: &str) -> std::path::PathBuf {
    dir.join(format!("pass{p}_{tag}"))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn save_state(state: &PropagationState, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let n_nodes = state.passes.first().map_or(0, Vec::len);
    for (p, pass) in state.passes.iter().enumerate() {
        let tag = &state.directions[..=p];
        let pd = pass_dir(dir, p, tag);
        for sub in ["samples", "classifiers", "regressors", "nodes"] {
            fs::create_dir_all(pd.join(sub))?;
        }
        for s in pass {
            let i = s.node;
            s.samples.write_csv(&pd.join("samples").join(format!("node{i}.csv")))?;
            write_json(&pd.join("classifiers").join(format!("node{i}.json")), &s.classifier)?;
            write_json(&pd.join("regressors").join(format!("node{i}.json")), &s.regressors)?;
            let meta = NodeFile {
                node: i,
                direction_tag: s.direction_tag.clone(),
                domain: s.domain.clone(),
                input_box: s.input_box.clone(),
                payloads: s.payloads.clone(),
                classifier_report: s.classifier_report.clone(),
                regressor_reports: s.regressor_reports.clone(),
                counts: s.counts,
                diagnostics: s.diagnostics,
            };
            write_json(&pd.join("nodes").join(format!("node{i}.json")), &meta)?;
        }
    }
    let top = StateFile {
        directions: state.directions.clone(),
        n_nodes,
        backward_domains: state.backward_domains.clone(),
        domain_counts: state.domain_counts,
        counts: state.counts,
        lifted: state.lifted,
        terminal: state.terminal,
        graph_fingerprint: state.graph_fingerprint.clone(),
        config_hash: state.config_hash.clone(),
    };
    write_json(&dir.join("state.json"), &top)
}

pub fn load_state(dir: &Path) -> Result<PropagationState> {
    let top_path = dir.join("state.json");
    if !top_path.exists() {
        return Err(Error::StateMismatch(format!("no state.json in {}", dir.display())));
    }
    let top: StateFile = read_json(&top_path)?;
    let mut passes = Vec::new();
    for p in 0..top.directions.len() {
        let pd = pass_dir(dir, p, &top.directions[..=p]);
        let mut pass = Vec::with_capacity(top.n_nodes);
        for i in 0..top.n_nodes {
            let samples = SampleSet::read_csv(&pd.join("samples").join(format!("node{i}.csv")))?;
            let classifier: SvmClassifier = read_json(&pd.join("classifiers").join(format!("node{i}.json")))?;
            let regressors: BTreeMap<NodeId, KrrRegressor> =
                read_json(&pd.join("regressors").join(format!("node{i}.json")))?;
            let m: NodeFile = read_json(&pd.join("nodes").join(format!("node{i}.json")))?;
            if m.node != i {
                return Err(Error::StateMismatch(format!("node file {i} describes node {}", m.node)));
            }
            pass.push(NodeState::assemble(
                i,
                m.direction_tag,
                m.domain,
                m.input_box,
                samples,
                m.payloads,
                classifier,
                m.classifier_report,
                regressors,
                m.regressor_reports,
                m.counts,
                m.diagnostics,
            ));
        }
        passes.push(pass);
    }
    Ok(PropagationState {
        directions: top.directions,
        passes,
        backward_domains: top.backward_domains,
        domain_counts: top.domain_counts,
        counts: top.counts,
        lifted: top.lifted,
        terminal: top.terminal,
        graph_fingerprint: top.graph_fingerprint,
        config_hash: top.config_hash,
    })
}
