use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: need {needed} bytes, found {found}")]
    TruncatedPayload { needed: usize, found: usize },

    #[error("non-finite element at index {0}")]
    NonFinite(usize),

    #[error("invalid tensor shape: {0}")]
    Shape(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,

    #[error("document parse error in {path}: {message}")]
    Document { path: PathBuf, message: String },

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("singleton group {0:?}")]
    SingletonGroup(String),

    #[error("S^c ∩ Y ≠ ∅: subcategory id {0:?} already in the label space")]
    SplitCollision(String),

    #[error("empty modifier: {fine:?} minus {base:?}")]
    EmptyModifier { fine: String, base: String },

    #[error("no shared base among {0:?}")]
    NoSharedBase(Vec<String>),

    #[error("unknown member {0:?}")]
    UnknownMember(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("missing embedding key {0:?}")]
    MissingKey(String),

    #[error("empty dictionary")]
    EmptyDictionary,

    #[error("missing dependency for method {method}: {what}")]
    MissingDependency { method: String, what: String },

    #[error("insufficient shots for {label:?}: need {needed}, found {found}")]
    InsufficientShots {
        label: String,
        needed: usize,
        found: usize,
    },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("locality undefined: original head has no correct predictions")]
    LocalityUndefined,

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the inputs' content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
