//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("negative entry {value} in {what} at ({row}, {col})")]
    NegativeEntry {
        what: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("entry {value} of {what} at index {index} lies outside [0, 1]")]
    OutOfUnitInterval {
        what: String,
        index: usize,
        value: f64,
    },

    #[error("row {row} of {what} in layer {layer} sums to {sum}; must be 1 within 1e-6")]
    RowSumInvalid {
        what: String,
        layer: usize,
        row: usize,
        sum: f64,
    },

    #[error("mismatch weights c[{layer}][{agent}][{source_index}] must be nonnegative and sum to 1 (sum = {sum})")]
    MismatchWeightInvalid {
        layer: usize,
        agent: usize,
        source_index: usize,
        sum: f64,
    },

    #[error("gamma({layer},{agent},{source_index}) = {gamma} exceeds omega = {omega}")]
    GammaExceedsOmega {
        layer: usize,
        agent: usize,
        source_index: usize,
        gamma: f64,
        omega: f64,
    },

    #[error("negative confidence threshold eps({agent}) = {value}")]
    NegativeThreshold { agent: usize, value: f64 },

    #[error("{what} index {index} out of range (< {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error(
        "row-sub-stochasticity violated at layer {layer}, agent {agent}: \
         alpha (1 + sum_k b) = {value} > 1"
    )]
    SubStochasticityViolated {
        layer: usize,
        agent: usize,
        value: f64,
    },

    #[error("updated state left [0, 1] at layer {layer}, agent {agent} by {excess:e}")]
    StateExcursion {
        layer: usize,
        agent: usize,
        excess: f64,
    },

    #[error(
        "alpha({layer},{agent}) = {value} >= 1: I - AW may be singular, resolvent refused"
    )]
    AlphaNotBelowOne {
        layer: usize,
        agent: usize,
        value: f64,
    },

    #[error("phi_lower exceeds phi_upper at layer {layer}, agent {agent}, source {source_index}")]
    BoundsInverted {
        layer: usize,
        agent: usize,
        source_index: usize,
    },

    #[error("affine contraction factor kappa_aff = {kappa_aff} >= 1; exact solve refused")]
    NotContractive { kappa_aff: f64 },

    #[error("{op} requires the affine source rule")]
    AffineRuleRequired { op: &'static str },

    #[error("linear solve failed: {0}")]
    SingularSystem(String),

    #[error("no consistent sign pattern found; nearest misses: {details}")]
    NoConsistentPattern { details: String },

    #[error("projected covariance row for layer {layer} sums to zero; cross-topic coupling undefined")]
    ZeroCovarianceRow { layer: usize },

    #[error("wave data is empty or has fewer than 2 waves")]
    EmptyWaves,

    #[error("agent {agent} has no observed value for layer {layer} in any wave")]
    AllWavesMissing { agent: usize, layer: usize },

    #[error("scenario invalid: {0}")]
    ScenarioInvalid(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for I/O, parse, and schema problems, as opposed to model or
    /// assumption failures. The CLI maps these to a distinct exit status.
    pub fn is_io_or_schema(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Data(_)
        )
    }
}
