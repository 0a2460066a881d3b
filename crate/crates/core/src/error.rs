use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its domain. `name` is the dotted config key.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("Feller check is not applicable to a constant-volatility market")]
    FellerNotApplicable,

    #[error("Feller condition violated: 2*lambda*theta = {lhs} <= sigma_nu^2 = {rhs}")]
    FellerViolation { lhs: f64, rhs: f64 },

    #[error("simulation produced a non-finite value on path {path} at step {step}")]
    SimulationFailure { path: usize, step: usize },

    #[error("utility domain error: {0}")]
    Domain(String),

    #[error("empty sample")]
    EmptySample,

    #[error("degenerate wealth grid at step {step}: upper bound {upper} <= lower bound {lower}")]
    DegenerateGrid { step: usize, lower: f64, upper: f64 },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("backward sweep failed at step {step}, node {node}: {source}")]
    Sweep {
        step: usize,
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("policy/grid mismatch: {0}")]
    Mismatch(String),

    #[error("time {0} is not on the simulation grid")]
    OffGrid(f64),

    #[error("scenario `{label}`: {source}")]
    Scenario {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{0} scenario(s) failed")]
    CellsFailed(usize),

    #[error("config: {0}")]
    Config(String),

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write `{path}`: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParameter { .. }
            | Error::FellerViolation { .. }
            | Error::FellerNotApplicable
            | Error::Config(_)
            | Error::Read { .. } => true,
            Error::Scenario { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
