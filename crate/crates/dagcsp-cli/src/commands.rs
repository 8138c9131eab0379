use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dagcsp::domains::SampleSet;
use dagcsp::graph::GraphSpec;
use dagcsp::models::{case_graph, fit_joint_classifier, sip_solve, smallest_error_starts, SipResult};
use dagcsp::propagate::{load_state, propagate, save_state, PropagationState};
use dagcsp::reconstruct::{compare_runs, reconstruct, simultaneous, ReconstructionResult, RunSummary};
use dagcsp::samplers::{derive_seed, SamplerConfig};
use dagcsp::surrogates::{CvReport, SvmClassifier};
use serde::{Deserialize, Serialize};

use crate::config::{resolve, Overrides, RunConfig};
use crate::CliError;

const RECONSTRUCT_STREAM: u64 = 0x7265_636f;
const BASELINE_STREAM: u64 = 0x6261_7365;
const SIP_STREAM: u64 = 0x0073_6970;

/// Fresh output directory; an existing one is replaced only with `overwrite`.
pub fn prepare_out(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        if !overwrite {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
        } else {
            fs::remove_file(dir).with_context(|| format!("removing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn graph(cfg: &RunConfig) -> Result<GraphSpec, CliError> {
    case_graph(&cfg.case).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub name: String,
    pub candidates: u64,
    pub feasible: u64,
    pub nlp_unconverged: u64,
    pub classifier_cv_accuracy: Option<f64>,
    pub regressor_cv_mse: Vec<(usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PropagateMetrics {
    pub command: String,
    pub case: String,
    pub directions: String,
    pub seed: u64,
    pub config_hash: String,
    pub counts: dagcsp::samplers::EvalCounts,
    pub domain_counts: dagcsp::samplers::EvalCounts,
    /// Latest pass only.
    pub nodes: Vec<NodeMetrics>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SipReport {
    pub classifier_cv: CvReport,
    pub result: SipResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunMetrics {
    pub command: String,
    pub case: String,
    pub seed: u64,
    pub config_hash: String,
    pub target: usize,
    pub budget: u64,
    pub summary: RunSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sip: Option<SipReport>,
}

fn node_metrics(g: &GraphSpec, state: &PropagationState) -> Vec<NodeMetrics> {
    state
        .latest()
        .iter()
        .map(|s| NodeMetrics {
            node: s.node,
            name: g.node(s.node).name.clone(),
            candidates: s.diagnostics.candidates,
            feasible: s.diagnostics.feasible,
            nlp_unconverged: s.diagnostics.nlp_unconverged,
            classifier_cv_accuracy: s.classifier_report.as_ref().map(CvReport::mean_cv),
            regressor_cv_mse: s.regressor_reports.iter().map(|(k, r)| (*k, r.mean_cv())).collect(),
        })
        .collect()
}

pub fn cmd_propagate(file: Option<&Path>, flags: &Overrides, out: &Path, overwrite: bool) -> Result<(), CliError> {
    let cfg = resolve(None, file, flags, true)?;
    let g = graph(&cfg)?;
    prepare_out(out, overwrite)?;
    let started = std::time::Instant::now();
    let mut state = propagate(&g, &cfg.propagate_config())?;
    state.config_hash = cfg.propagation_hash();
    save_state(&state, out)?;
    write_json(&out.join("config.json"), &cfg)?;
    let metrics = PropagateMetrics {
        command: "propagate".into(),
        case: cfg.case.clone(),
        directions: cfg.directions.clone(),
        seed: cfg.seed,
        config_hash: state.config_hash.clone(),
        counts: state.counts,
        domain_counts: state.domain_counts,
        nodes: node_metrics(&g, &state),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("case {} directions {} seed {}", cfg.case, cfg.directions, cfg.seed);
    for n in &metrics.nodes {
        println!(
            "  node {} ({}): {} feasible of {} candidates, classifier CV {}",
            n.node,
            n.name,
            n.feasible,
            n.candidates,
            n.classifier_cv_accuracy.map_or("n/a".to_string(), |a| format!("{a:.3}"))
        );
    }
    println!(
        "constituent evals {}, constraint evals {}, embedded solves {} in {:.1?}",
        state.counts.constituent_evals,
        state.counts.constraint_evals,
        state.counts.nlp_solves,
        started.elapsed()
    );
    Ok(())
}

fn joint_sip(g: &GraphSpec, cfg: &RunConfig, samples: &SampleSet) -> Result<(SvmClassifier, SipReport), CliError> {
    let c = g.coupling.as_ref().filter(|c| c.n_error == 1).ok_or_else(|| {
        CliError::Usage(format!("case {} has no coupling vector with an error coordinate", cfg.case))
    })?;
    let nz = c.bounds.dim();
    let seed = derive_seed(cfg.seed, SIP_STREAM);
    let (clf, cv) = fit_joint_classifier(samples, &cfg.sip.svm_grid, cfg.sip.per_class_cap, seed)?;
    let mut solver = cfg.sip.solver.clone();
    solver.seed = seed;
    solver.warm_starts.extend(smallest_error_starts(samples, g.param_dim(), cfg.sip.n_warm));
    let result = sip_solve(&clf, &g.param_box(), &c.bounds.slice(0..nz - 1), &c.bounds.slice(nz - 1..nz), &solver)?;
    Ok((clf, SipReport { classifier_cv: cv, result }))
}

fn write_run(
    out: &Path,
    command: &str,
    cfg: &RunConfig,
    config_hash: String,
    run: &ReconstructionResult,
    sip: Option<(SvmClassifier, SipReport)>,
) -> anyhow::Result<()> {
    run.joint_samples.write_csv(&out.join("joint_samples.csv"))?;
    write_json(&out.join("config.json"), cfg)?;
    if let Some((clf, s)) = &sip {
        fs::create_dir_all(out.join("classifiers"))?;
        write_json(&out.join("classifiers").join("joint.json"), clf)?;
        write_json(&out.join("classifiers").join("sip.json"), s)?;
    }
    let summary = run.summary();
    println!(
        "{command}: {} feasible of {} candidates, {} constituent evals, acceptance ratio {:.6}",
        summary.n_feasible, summary.n_candidates, summary.counts.constituent_evals, summary.acceptance_ratio
    );
    if let Some((_, s)) = &sip {
        println!(
            "semi-infinite program: eps* {:.4} after {} iterations (joint classifier CV {:.3})",
            s.result.eps_star,
            s.result.iterations,
            s.classifier_cv.mean_cv()
        );
    }
    let metrics = RunMetrics {
        command: command.into(),
        case: cfg.case.clone(),
        seed: cfg.seed,
        config_hash,
        target: cfg.target,
        budget: cfg.budget,
        summary,
        sip: sip.map(|(_, s)| s),
    };
    write_json(&out.join("metrics.json"), &metrics)
}

pub fn cmd_reconstruct(
    state_dir: &Path,
    file: Option<&Path>,
    flags: &Overrides,
    out: &Path,
    overwrite: bool,
    with_sip: bool,
) -> Result<(), CliError> {
    if !state_dir.join("state.json").exists() {
        return Err(CliError::Runtime(anyhow::anyhow!("{} holds no propagation state", state_dir.display())));
    }
    let stored: RunConfig = read_json(&state_dir.join("config.json"))?;
    let cfg = resolve(Some(&stored), file, flags, false)?;
    let state = load_state(state_dir)?;
    let hash = cfg.propagation_hash();
    if hash != state.config_hash {
        return Err(dagcsp::Error::StateMismatch(format!(
            "state was propagated with config {} but the current config hashes to {hash}",
            state.config_hash
        ))
        .into());
    }
    let g = graph(&cfg)?;
    prepare_out(out, overwrite)?;
    let run = reconstruct(&g, &state, cfg.target, cfg.budget, derive_seed(cfg.seed, RECONSTRUCT_STREAM))?;
    let sip = with_sip.then(|| joint_sip(&g, &cfg, &run.joint_samples)).transpose()?;
    write_run(out, "reconstruct", &cfg, hash, &run, sip)?;
    Ok(())
}

pub fn cmd_baseline(
    file: Option<&Path>,
    flags: &Overrides,
    out: &Path,
    overwrite: bool,
    with_sip: bool,
) -> Result<(), CliError> {
    let cfg = resolve(None, file, flags, false)?;
    let g = graph(&cfg)?;
    prepare_out(out, overwrite)?;
    let scfg = SamplerConfig {
        target_feasible: cfg.target,
        max_evaluations: cfg.budget,
        seed: derive_seed(cfg.seed, BASELINE_STREAM),
        ..cfg.sampler.clone()
    };
    let run = simultaneous(&g, &scfg)?;
    let sip = with_sip.then(|| joint_sip(&g, &cfg, &run.joint_samples)).transpose()?;
    write_run(out, "baseline", &cfg, cfg.propagation_hash(), &run, sip)?;
    Ok(())
}

pub fn cmd_compare(a: &Path, b: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let load = |d: &Path| -> anyhow::Result<RunSummary> {
        let m: RunMetrics = read_json(&d.join("metrics.json"))?;
        Ok(m.summary)
    };
    let report = compare_runs(&load(a)?, &load(b)?)?;
    let text = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    println!("{text}");
    if let Some(path) = out {
        if path.exists() {
            return Err(CliError::Runtime(anyhow::anyhow!("{} already exists", path.display())));
        }
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Plot-ready copy of the latest pass: labelled samples, classifiers and
/// regressors per node.
pub fn cmd_export(state_dir: &Path, out: &Path, overwrite: bool) -> Result<(), CliError> {
    let state = load_state(state_dir)?;
    prepare_out(out, overwrite)?;
    for sub in ["classifiers", "regressors"] {
        fs::create_dir_all(out.join(sub)).map_err(anyhow::Error::from)?;
    }
    for s in state.latest() {
        let i = s.node;
        s.samples.write_csv(&out.join(format!("node{i}.csv")))?;
        write_json(&out.join("classifiers").join(format!("node{i}.json")), &s.classifier)?;
        write_json(&out.join("regressors").join(format!("node{i}.json")), &s.regressors)?;
    }
    println!("exported {} nodes of pass {:?} to {}", state.latest().len(), state.directions, out.display());
    Ok(())
}

pub fn out_or_default(out: Option<PathBuf>, name: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("runs").join(name))
}
