use std::io;
use std::path::PathBuf;

use crate::protocol::{ProtocolError, RoundPhase};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("a table needs at least one vector")]
    NoVectors,
    #[error("slots per vector must be a non-zero power of two, got {0}")]
    SlotsNotPowerOfTwo(usize),
    #[error("network needs at least one switch")]
    NoSwitches,
    #[error("at most {max} switches are addressable, got {got}")]
    TooManySwitches { got: usize, max: usize },
    #[error("drop probability must lie in [0, 1), got {0}")]
    DropProbability(f64),
    #[error("cluster count {clusters} must lie in 1..={switches}")]
    Clusters { clusters: usize, switches: usize },
    #[error("k = {k} exceeds the table capacity d*s = {cells}")]
    KExceedsCapacity { k: usize, cells: usize },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("switch {switch} expected phase {expected:?} but is in {found:?}")]
pub struct PhaseError {
    pub switch: u16,
    pub expected: RoundPhase,
    pub found: RoundPhase,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: malformed trace: {reason}")]
    TraceFormat { path: PathBuf, reason: String },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("invariant violated: {summary}\n{dump}")]
    Invariant { summary: String, dump: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
