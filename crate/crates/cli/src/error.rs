use thiserror::Error;

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    IterationLimit,
    /// Numerical failures were recorded (sweep rows, verification checks).
    Failed,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nlcap::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 1 for bad input, 2 for an exhausted iteration budget, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        use nlcap::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::IterationLimit(_) => 2,
                E::NonstochasticChannel { .. }
                | E::ZeroConditional { .. }
                | E::NewtonDiverged { .. }
                | E::LpNumericalFailure(_)
                | E::DegenerateProjection { .. }
                | E::SearchRangeExhausted { .. }
                | E::StagnationWithoutConvergence { .. }
                | E::NoRestartCompleted(_) => 3,
                _ => 1,
            },
            CliError::ThreadPool(_) => 3,
            CliError::Usage(_) | CliError::Io { .. } | CliError::Csv { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
