use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in {field} at node {node}")]
    NonFinite { field: &'static str, node: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("noise spectrum violates the Hilbert-Schmidt condition: s = {s} <= r + n/2 = {bound}")]
    HilbertSchmidt { s: f64, bound: f64 },

    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid initial data: {0}")]
    InvalidInitialData(String),

    #[error("blow-up at step {step} (t = {time}): sup |{field}| = {sup}")]
    BlowUp { step: usize, time: f64, field: &'static str, sup: f64 },

    #[error("uncertified singular division at step {step}: min phi = {min_phi} with epsilon = 0")]
    SingularDivision { step: usize, min_phi: f64 },

    #[error("trajectory carries no noise ledger")]
    MissingLedger,

    #[error("weight kind not admissible here: {0}")]
    InadmissibleWeight(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name: name.into(), reason: reason.into() }
}
