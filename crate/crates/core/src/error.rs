use thiserror::Error;

/// Errors raised by group construction, matrix algebra, layers and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group order {0}")]
    InvalidOrder(usize),

    #[error("group order {requested} exceeds the maximum {max}")]
    Capacity { requested: usize, max: usize },

    #[error("table does not define a group: {0}")]
    InvalidTable(String),

    #[error("generators {generators:?} reach only {reached} of {order} elements")]
    NotGenerating {
        generators: Vec<usize>,
        reached: usize,
        order: usize,
    },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid subgroup: {0}")]
    InvalidSubgroup(String),

    #[error("element id {id} out of range for group of order {order}")]
    ElementOutOfRange { id: usize, order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("operands live over different groups")]
    GroupMismatch,

    #[error("matrix has no usable inverse (condition number {0:e})")]
    NoInverse(f64),

    #[error("inverse is not a group matrix (deviation {deviation:e}, allowed {allowed:e})")]
    InexactInverse { deviation: f64, allowed: f64 },

    #[error("invalid restriction: {0}")]
    InvalidRestriction(String),

    #[error("invalid permutation family: {0}")]
    InvalidFamily(String),

    #[error("duplicate LDR position {0}")]
    DuplicatePosition(usize),

    #[error("kernel support element {0} is outside the window kernel set")]
    KernelSupport(String),

    #[error("representatives inconsistent with stabilizer: {0}")]
    InvalidRepresentatives(String),

    #[error("shape mismatch at layer {layer}: {msg}")]
    LayerShape { layer: usize, msg: String },

    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed matrix file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
