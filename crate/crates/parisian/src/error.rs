use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter `{field}` = {value}: {reason}")]
    Domain {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("covariance matrix is singular at s={s}, t={t}")]
    SingularCovariance { s: f64, t: f64 },

    #[error("relation `{relation}` is inconsistent with t* = {t_star}")]
    InconsistentBranch {
        relation: &'static str,
        t_star: f64,
    },

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("tilt target is degenerate: {0}")]
    DegenerateTarget(String),

    #[error("no classical ruin observed in {n_paths} paths at u={u}; enable tilting or lower u")]
    InsufficientSamples { u: f64, n_paths: u64 },

    #[error("weights underflowed at u={u}; every accumulated weight was zero")]
    Underflow { u: f64 },

    #[error("constant `{0}` is required by the regime but was not supplied")]
    MissingConstant(&'static str),

    #[error("constant diverges: {0}")]
    Divergent(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(field: &'static str, value: f64, reason: &'static str) -> Self {
        Error::Domain {
            field,
            value,
            reason,
        }
    }

    /// Process exit code for the CLI: 2 for bad input, 3 for simulation quality, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. }
            | Error::Config(_)
            | Error::InconsistentBranch { .. }
            | Error::Divergent(_)
            | Error::SingularCovariance { .. } => 2,
            Error::InsufficientSamples { .. } | Error::Underflow { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
