use alloc::string::String;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unsupported wavelet family: {0}")]
    UnsupportedFamily(String),
    #[error("table depth {0} outside the supported range 4..=24")]
    InvalidDepth(u32),
    #[error("refinement matrix is singular; the filter does not define a scaling function")]
    SingularRefinement,
    #[error("infeasible reference density: flat mass c0*(b-a) = {0} must be below 1")]
    InfeasibleMass(f64),
    #[error("invalid density parameters: {0}")]
    InvalidDensity(String),
    #[error("perturbation violates non-negativity: gamma*2^(j/2)*sup|psi| = {lhs} exceeds c0 = {c0}")]
    NegativePerturbation { lhs: f64, c0: f64 },
    #[error("no disjoint mother-wavelet supports fit inside the flat interval at level {0}")]
    EmptyPackingSet(i32),
    #[error("theta has length {got}, expected {expected}")]
    ThetaLength { got: usize, expected: usize },
    #[error("invalid mechanism configuration: {0}")]
    InvalidMechanism(String),
    #[error("invalid estimator configuration: {0}")]
    InvalidEstimator(String),
    #[error("privacy budget too small for the adaptive rule: n*alpha^2 = {0} must exceed e")]
    BudgetTooSmall(f64),
    #[error("no records to aggregate")]
    EmptyRecords,
    #[error("records do not share one slot layout")]
    InconsistentLayout,
    #[error("requested level {requested} exceeds the available top level {available}")]
    LevelOutOfRange { requested: i32, available: i32 },
    #[error("mechanism nu = {mechanism} does not match estimator nu = {estimator}")]
    NuMismatch { mechanism: f64, estimator: f64 },
    #[error("invalid rate parameters: {0}")]
    InvalidRateParameters(String),
    #[error("risk grid has {got} intervals, at least {required} required")]
    GridTooCoarse { got: usize, required: usize },
    #[error("rate fit needs at least {required} finite points, got {got}")]
    TooFewPoints { got: usize, required: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
