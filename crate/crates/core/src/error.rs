use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("invalid interval series: {0}")]
    InvalidSeries(String),

    #[error("synthetic trace request is infeasible: {0}")]
    InfeasibleGeneration(String),

    #[error("invalid workload profile: {0}")]
    InvalidProfile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scenario enumeration of C({n}, {k}) = {count} exceeds the cap of {cap}; use sampling")]
    EnumerationCap { n: u32, k: u32, count: u128, cap: u128 },

    /// A pipeline stage lost every replica; its state can only be restored
    /// from a checkpoint.
    #[error("rollback required: stage {stage} has no surviving replica")]
    RollbackRequired { stage: u32 },

    #[error("target configuration unreachable: {0}")]
    Unreachable(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
