use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped loosely by subsystem; the CLI maps each group onto a
/// distinct process exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // tensor
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dtype error: {0}")]
    DType(String),
    #[error("axis {axis} out of range for rank {rank}")]
    Axis { axis: usize, rank: usize },
    #[error("reduction over an empty axis")]
    EmptyReduction,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("operands live on different backends ({left} vs {right})")]
    BackendMismatch { left: String, right: String },
    #[error("backend `{0}` is already registered")]
    DuplicateBackend(String),
    #[error("unknown backend `{0}`")]
    UnknownBackend(String),

    // memory
    #[error("out of memory: requested {requested} bytes, {available} available")]
    OutOfMemory { requested: usize, available: usize },
    #[error("memory manager has {0} live blocks outstanding")]
    ManagerBusy(usize),
    #[error("block {0} freed twice")]
    DoubleFree(u64),
    #[error("block {0} is unknown to this manager")]
    UnknownBlock(u64),
    #[error("malformed trace at event {index}: {message}")]
    Trace { index: usize, message: String },

    // autograd
    #[error("backward from a non-scalar root requires an explicit seed gradient")]
    SeedRequired,
    #[error("tape already consumed; pass retain_graph to backward twice")]
    TapeConsumed,
    #[error("gradient shape mismatch in `{op}`: expected {expected}, got {got}")]
    GradShape { op: String, expected: String, got: String },

    // nn / optim
    #[error("index error: {0}")]
    Index(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("meter has no updates")]
    EmptyMeter,
    #[error("parameter {0} has no gradient")]
    MissingGradient(usize),

    // data
    #[error("ragged batch: {0}")]
    BatchShape(String),
    #[error("data error: {0}")]
    Data(String),

    // distributed
    #[error("collective shape disagreement: {0}")]
    CollectiveShape(String),
    #[error("collective timed out after {0:?}")]
    CollectiveTimeout(std::time::Duration),
    #[error("rendezvous error: {0}")]
    Rendezvous(String),

    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
