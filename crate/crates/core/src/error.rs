use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field has {got} values but the grid has {expected} nodes")]
    ValueCount { expected: usize, got: usize },

    #[error("non-finite sample {value} at node {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("singular point {point:?} of `{entry}` is within {clearance} of node {index}")]
    SingularNode {
        entry: String,
        index: usize,
        point: Vec<f64>,
        clearance: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("node {0} is on the grid boundary; the stencil needs a one-node margin")]
    BoundaryNode(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("q = {q} is not admissible for p = {p}: need q > p/(p-1) = {dual}")]
    Inadmissible { p: f64, q: f64, dual: f64 },

    #[error("gradient vanishes at {0:?}")]
    ZeroGradient(Vec<f64>),

    #[error("test function support violates the admissible region: {0}")]
    Support(String),

    #[error("p = {p} is outside the labeled range of `{entry}`")]
    OutOfRange { entry: String, p: f64 },

    #[error("unknown gallery entry `{0}`")]
    UnknownEntry(String),

    #[error("schedule is not strictly monotone: {0:?}")]
    Schedule(Vec<f64>),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
