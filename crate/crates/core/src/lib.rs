//! Deterministic simulator for distributed SGD with bidirectional
//! compression.
//!
//! The crate covers the objective families and their data ([`problems`]),
//! unbiased compressors with bit accounting ([`compressors`]), the unified
//! compressed-SGD engine and its presets ([`algorithms`]), per-iteration
//! diagnostics ([`metrics`]), Monte-Carlo certification of the engine
//! ([`validation`]) and config-driven experiments ([`experiment`]).
//!
//! All randomness is drawn from counter-based streams ([`rng`]), so results
//! depend only on seeds and never on thread scheduling.

pub mod algorithms;
pub mod compressors;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod stats;
pub mod validation;
pub mod vector;

pub use algorithms::{AlgoConfig, AlgoName, AlgoState, Engine, GammaPolicy, RunStatus};
pub use compressors::{BitCost, CompressorKind, CompressorSpec};
pub use metrics::{IterRecord, RunSummary, RunTrace};
pub use problems::{BatchSpec, Family, Hetero, Problem, SynthOptions};
pub use rng::{Phase, RngRoot};
pub use vector::ParamVector;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid value for `{field}`: {msg}")]
    InvalidConfig { field: String, msg: String },
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: u64, residual: f64 },
    #[error("worker {0} has an empty shard")]
    EmptyShard(usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
