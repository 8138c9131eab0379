use thiserror::Error;

/// Errors raised by graph construction, sampling, training and propagation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a cycle through nodes {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("edge {from}->{to}: {reason}")]
    DimensionMismatch { from: usize, to: usize, reason: String },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("malformed box: {0}")]
    MalformedBox(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("cannot take the hull of an empty sample set")]
    EmptySampleSet,
    #[error("invalid sampler configuration: {0}")]
    InvalidSamplerConfig(String),
    #[error("training set contains a single class")]
    SingleClassDataset,
    #[error("kernel matrix is not positive definite even with the regularisation floor")]
    SingularKernel,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("integrator produced a non-finite state at t={0}")]
    NonFiniteState(f64),
    #[error("invalid direction string {0:?}")]
    InvalidDirectionString(String),
    #[error("sampling budget exhausted without a feasible point")]
    BudgetExhaustedEmpty,
    #[error("node {0} admitted no feasible sample")]
    EmptySubproblemSolution(usize),
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("runs were produced on different graphs")]
    GraphMismatch,
    #[error("no propagated state for node {0}")]
    MissingNodeState(usize),
    #[error("no upstream feasible samples from node {0}")]
    EmptyUpstreamSolution(usize),
    #[error("graph declares no coupling box")]
    MissingCouplingBox,
    #[error("run did not lift coupling parameters")]
    NotLiftedRun,
    #[error("temperature must be positive, got {0}")]
    NonpositiveTemperature(f64),
    #[error("joint dimension {dim} exceeds the oracle limit of {max}")]
    DimensionGuard { dim: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no approximator satisfies the classifier for every coupling value")]
    NoFeasibleApproximator,
    #[error("model error: {0}")]
    Model(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
