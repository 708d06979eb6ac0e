use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:.3e}, spectral radius {spectral_radius:.3e})")]
    NotPsd { min_eigenvalue: f64, spectral_radius: f64 },

    #[error("node `{0}` already exists")]
    DuplicateNode(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{node}` has no quantity labelled `{label}`")]
    UnknownLabel { node: String, label: String },

    #[error("duplicate label `{label}` in node `{node}`")]
    DuplicateLabel { node: String, label: String },

    #[error("arc {from} -- {to} would close the cycle {}", cycle.join(" -- "))]
    Cycle {
        from: String,
        to: String,
        cycle: Vec<String>,
    },

    #[error("arc {0} -- {1} already exists")]
    DuplicateArc(String, String),

    #[error("no path between `{0}` and `{1}`")]
    NoPath(String, String),

    #[error("adjustment plan is stale (built at version {planned}, tree is at version {current})")]
    StalePlan { planned: u64, current: u64 },

    #[error("adjustment plan has already been applied")]
    PlanAlreadyApplied,

    #[error("cannot prune `{node}`: {reason}")]
    InvalidPrune { node: String, reason: String },

    #[error("`{root}` is not a strong root for the evidence: {reason}")]
    InvalidRoot { root: String, reason: String },

    #[error("expected size is zero but observed size is {size:.3e}")]
    DegenerateRatio { size: f64 },

    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("joint oracle refused: {nodes} nodes exceeds the limit of {limit}")]
    OracleTooLarge { nodes: usize, limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("model is invalid: {0}")]
    InvalidModel(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code used by the command line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidMatrix(_) => "invalid-matrix",
            Error::Shape(_) => "shape",
            Error::NotPsd { .. } => "not-psd",
            Error::DuplicateNode(_) => "duplicate-node",
            Error::UnknownNode(_) => "unknown-node",
            Error::UnknownLabel { .. } => "unknown-label",
            Error::DuplicateLabel { .. } => "duplicate-label",
            Error::Cycle { .. } => "cycle",
            Error::DuplicateArc(..) => "duplicate-arc",
            Error::NoPath(..) => "no-path",
            Error::StalePlan { .. } => "stale-plan",
            Error::PlanAlreadyApplied => "plan-applied",
            Error::InvalidPrune { .. } => "invalid-prune",
            Error::InvalidRoot { .. } => "invalid-root",
            Error::DegenerateRatio { .. } => "degenerate-ratio",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::OracleTooLarge { .. } => "oracle-too-large",
            Error::Parse(_) => "parse",
            Error::InvalidModel(_) => "invalid-model",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
