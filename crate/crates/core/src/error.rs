use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a latent file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("unsupported latent file version {0}")]
    UnsupportedVersion(u16),
    #[error("shape mismatch: expected {expected} bytes, found {actual}")]
    ShapeMismatch { expected: u64, actual: u64 },
    #[error("non-finite value in row {row}")]
    NonFiniteValue { row: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate pair at line {line}: {factual} -> {counterfactual}")]
    DuplicatePair {
        line: usize,
        factual: String,
        counterfactual: String,
    },
    #[error("line {line}: predicted class equals target class {class:?}")]
    ClassEqualsTarget { line: usize, class: String },
    #[error("unresolved id {0:?}")]
    UnresolvedId(String),
    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("every difference row was at or below the norm threshold")]
    AllRowsDegenerate,
    #[error("too few points: {n} points for {k} clusters")]
    TooFewPoints { n: usize, k: usize },
    #[error("cluster {cluster} has a degenerate mean")]
    DegenerateMean { cluster: usize },
    #[error("silhouette needs at least two distinct clusters")]
    SingleCluster,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("probability tables disagree on ids or classes")]
    IdMismatch,
    #[error("unknown target class {0:?}")]
    UnknownTarget(String),
    #[error("empty concept list")]
    EmptyConceptList,
    #[error("redundancy needs at least two directions")]
    SingleDirection,
    #[error("too few samples: {0} (need at least 2)")]
    TooFewSamples(usize),
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("empty gradient set")]
    EmptyGradients,
    #[error("insufficient negatives: pool of {pool} cannot yield {runs} distinct subsets of size {subset}")]
    InsufficientNegatives {
        pool: usize,
        subset: usize,
        runs: usize,
    },
    #[error("k_true {k} exceeds dimension {d}")]
    KExceedsD { k: usize, d: usize },
    #[error("instance too large for enumeration: {k}^{n} assignments")]
    InstanceTooLarge { n: usize, k: usize },
    #[error("direction sets differ in shape: {0}")]
    KMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory is locked: {0}")]
    Locked(PathBuf),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Locked(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::AllRowsDegenerate
            | Error::DegenerateMean { .. }
            | Error::NotPsd { .. }
            | Error::DegenerateData(_) => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
