use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("cycle detected through services {0:?}")]
    CycleDetected(Vec<u32>),

    #[error("expected exactly one frontend, found {0}")]
    FrontendCount(usize),

    #[error("edge ({caller}, {callee}) references an unknown service")]
    DanglingEdge { caller: u32, callee: u32 },

    #[error("unknown service id {0}")]
    UnknownService(u32),

    #[error("service {0} is structurally pinned and cannot root a subtree")]
    PinnedRoot(u32),

    #[error("missing weight for service {0}")]
    MissingWeight(u32),

    #[error("unknown region '{0}'")]
    UnknownRegion(String),

    #[error("timestamp {0} is outside the trace range")]
    OutOfRange(String),

    #[error("no instance in {region} fits {cpu} cores / {mem_gb} GB")]
    NoCompatibleInstance { region: String, cpu: f64, mem_gb: f64 },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("insufficient data: need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("expected a history of {expected} values, got {got}")]
    WrongHistoryLength { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no feasible placement: {0}")]
    Infeasible(String),

    #[error("search space too large for exhaustive search (10^{log10:.2} placements)")]
    SpaceTooLarge { log10: f64 },

    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),

    #[error("at tick {tick}: {source}")]
    AtTick {
        tick: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse { context: context.into(), message: message.to_string() }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::CycleDetected(_)
            | Error::FrontendCount(_)
            | Error::DanglingEdge { .. }
            | Error::UnknownService(_)
            | Error::UnknownRegion(_)
            | Error::MissingData(_)
            | Error::InvalidConfig(_)
            | Error::NoCompatibleInstance { .. }
            | Error::OutOfRange(_) => true,
            Error::AtTick { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible(_) => true,
            Error::AtTick { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}
