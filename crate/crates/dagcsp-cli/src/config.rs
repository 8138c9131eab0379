//! Run configuration: case defaults, then a TOML file, then flags.

use std::path::Path;

use dagcsp::models::{SipConfig, CASE_NAMES};
use dagcsp::propagate::{parse_directions, DomainConfig, NlpConfig, PropagateConfig, SurrogateConfig};
use dagcsp::samplers::SamplerConfig;
use dagcsp::surrogates::SvmGrid;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Joint classifier and semi-infinite program run after reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointSipConfig {
    pub per_class_cap: usize,
    pub svm_grid: SvmGrid,
    /// Smallest-error feasible samples used as warm starts.
    pub n_warm: usize,
    pub solver: SipConfig,
}

impl Default for JointSipConfig {
    fn default() -> Self {
        Self {
            per_class_cap: 1500,
            svm_grid: SvmGrid { reg_c: vec![10.0, 100.0, 1000.0], rbf_gamma: vec![0.05, 0.2, 0.5, 1.0] },
            n_warm: 5,
            solver: SipConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: String,
    pub directions: String,
    pub seed: u64,
    /// Joint feasible samples wanted from reconstruction or the baseline.
    pub target: usize,
    /// Evaluation budget of reconstruction or the baseline.
    pub budget: u64,
    pub sampler: SamplerConfig,
    pub nlp: NlpConfig,
    pub surrogate: SurrogateConfig,
    pub domain: DomainConfig,
    pub sip: JointSipConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: "linear5".into(),
            directions: "f".into(),
            seed: 0,
            target: 2000,
            budget: 2_000_000,
            sampler: SamplerConfig::default(),
            nlp: NlpConfig::default(),
            surrogate: SurrogateConfig::default(),
            domain: DomainConfig::default(),
            sip: JointSipConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn for_case(case: &str) -> Self {
        let mut c = Self { case: case.into(), ..Self::default() };
        if case == "funcapprox" {
            // the summation node has five parents; tying them all makes the
            // embedded problems large for little tightening
            c.nlp.coupling_terms = false;
            c.directions = "b".into();
            c.budget = 500_000;
        }
        c
    }

    pub fn propagate_config(&self) -> PropagateConfig {
        PropagateConfig {
            directions: self.directions.clone(),
            sampler: self.sampler.clone(),
            nlp: self.nlp.clone(),
            surrogate: self.surrogate.clone(),
            domain: self.domain.clone(),
            seed: self.seed,
        }
    }

    /// Hash of everything that determines a propagation run.
    pub fn propagation_hash(&self) -> String {
        let key = (&self.case, self.propagate_config());
        hex::encode(Sha256::digest(serde_json::to_vec(&key).expect("config serialises")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !CASE_NAMES.contains(&self.case.as_str()) {
            return Err(CliError::Usage(format!("unknown case {:?}; known: {}", self.case, CASE_NAMES.join(", "))));
        }
        parse_directions(&self.directions).map_err(|e| CliError::Usage(e.to_string()))?;
        self.sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.target == 0 {
            return Err(CliError::Usage("target must be positive".into()));
        }
        if self.budget == 0 {
            return Err(CliError::Usage("budget must be positive".into()));
        }
        Ok(())
    }
}

/// Values given on the command line; `None` leaves the layer below alone.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub case: Option<String>,
    pub directions: Option<String>,
    pub samples: Option<usize>,
    pub budget: Option<u64>,
    pub target: Option<usize>,
    pub seed: Option<u64>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn read_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
    serde_json::to_value(table).map_err(|e| CliError::Usage(e.to_string()))
}

/// Layer `file` and `flags` over `base`, or over the defaults of the chosen
/// case when there is no base. `samples` and `budget` flags go to the
/// propagation sampler when `budget_to_sampler` is set.
pub fn resolve(
    base: Option<&RunConfig>,
    file: Option<&Path>,
    flags: &Overrides,
    budget_to_sampler: bool,
) -> Result<RunConfig, CliError> {
    let file_value = file.map(read_file).transpose()?;
    let file_case = file_value.as_ref().and_then(|v| v.get("case")).and_then(Value::as_str).map(String::from);
    let mut value = match base {
        Some(b) => serde_json::to_value(b).expect("config serialises"),
        None => {
            let case = flags.case.clone().or(file_case).unwrap_or_else(|| "linear5".into());
            serde_json::to_value(RunConfig::for_case(&case)).expect("config serialises")
        }
    };
    if let Some(v) = file_value {
        merge(&mut value, v);
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| CliError::Usage(format!("bad config: {e}")))?;
    if let Some(c) = &flags.case {
        cfg.case = c.clone();
    }
    if let Some(d) = &flags.directions {
        cfg.directions = d.clone();
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(t) = flags.target {
        cfg.target = t;
    }
    if let Some(n) = flags.samples {
        if budget_to_sampler {
            cfg.sampler.target_feasible = n;
        } else {
            cfg.target = n;
        }
    }
    if let Some(b) = flags.budget {
        if budget_to_sampler {
            cfg.sampler.max_evaluations = b;
        } else {
            cfg.budget = b;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
