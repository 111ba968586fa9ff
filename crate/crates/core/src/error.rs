use thiserror::Error;

use crate::solver::SolverResult;

/// Which nonsignaling family a violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Party {
    /// Alice's marginal depends on Bob's setting.
    Alice,
    /// Bob's marginal depends on Alice's setting.
    Bob,
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Party::Alice => f.write_str("Alice"),
            Party::Bob => f.write_str("Bob"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("tensor has {found} entries, shape requires {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("entry p(r={r},s={s}|a={a},b={b}) = {value:e} is below -tol")]
    NegativeEntry {
        r: usize,
        s: usize,
        a: usize,
        b: usize,
        value: f64,
    },

    #[error("block (a={a},b={b}) sums to {sum}, residual {residual:e}")]
    NotNormalized {
        a: usize,
        b: usize,
        sum: f64,
        residual: f64,
    },

    #[error(
        "signaling: {party} marginal at outcome {outcome}, own setting {setting}, differs between remote settings {remote} and {remote_other} by {residual:e}"
    )]
    Signaling {
        party: Party,
        outcome: usize,
        setting: usize,
        remote: usize,
        remote_other: usize,
        residual: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "joint extension would need {entries} entries (limit {limit}); reduce the number of Bob settings or outcomes"
    )]
    CapacityPlanning { entries: u128, limit: u128 },

    #[error("invalid input distribution: {0}")]
    InvalidInputDist(String),

    #[error("channel row {row} sums to {sum} or has a negative entry")]
    NonstochasticChannel { row: usize, sum: f64 },

    #[error("rho(s|a) vanishes at (seq={seq}, a={a}) while rho(r={r},s|a) > 0")]
    ZeroConditional { r: usize, seq: usize, a: usize },

    #[error("Newton iteration failed after {iterations} iterations, last residual {residual:e}")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("outer iteration limit reached with gap {:e}", .0.gap)]
    IterationLimit(Box<SolverResult>),

    #[error("{count} deterministic vertices exceed the enumeration limit {limit}")]
    TooManyVertices { count: u128, limit: u128 },

    #[error("linear program failed: {0}")]
    LpNumericalFailure(String),

    #[error("projection onto the nonsignaling subspace is degenerate (norm {norm:e})")]
    DegenerateProjection { norm: f64 },

    #[error("bound maximizer sits on the search cap (value {value})")]
    SearchRangeExhausted { value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("basis {index} of {party} is not orthonormal (Gram residual {residual:e})")]
    NonOrthonormalBasis {
        party: Party,
        index: usize,
        residual: f64,
    },

    #[error("basis optimization stalled at stationarity residual {residual:e}")]
    StagnationWithoutConvergence { residual: f64 },

    #[error("no restart completed; first failure: {0}")]
    NoRestartCompleted(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
