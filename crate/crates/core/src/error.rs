use std::path::PathBuf;

use thiserror::Error;

use crate::network::TopologyViolation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network: {}", join_violations(.0))]
    InvalidNetwork(Vec<TopologyViolation>),

    #[error("unknown bus id {0}")]
    UnknownBus(usize),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("exact DistFlow sweep did not converge after {iterations} iterations (residual {residual:.3e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("SOC envelope violated for {asset}: {value} outside [{low}, {high}]")]
    Envelope {
        asset: String,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("delay {delay} out of range [0, {d_max}]")]
    DelayOutOfRange { delay: usize, d_max: usize },

    #[error("forecast of length {len} does not cover step {step} and wrapping is disabled")]
    ForecastTooShort { len: usize, step: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("base network admits no feasible periodic reference without flexible loads (stage-1 {0})")]
    Stage1Infeasible(String),

    #[error("stage-2 problem infeasible at step {step} (protocol violation)")]
    Stage2Infeasible { step: usize },

    #[error("conic solver failure ({code}) on program with {vars} variables, {rows} rows, {cones} cones")]
    Solver {
        code: String,
        vars: usize,
        rows: usize,
        cones: usize,
    },

    #[error("degenerate constant-rate tail for load {load}: plug-out at terminal step {step} with SOC {soc} below desired {desired}")]
    DegenerateTail {
        load: String,
        step: usize,
        soc: f64,
        desired: f64,
    },

    #[error("asset id {0} already present in the fleet")]
    DuplicateAsset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn join_violations(v: &[TopologyViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
