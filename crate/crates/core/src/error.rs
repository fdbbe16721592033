use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this tape; call zero_grad first")]
    BackwardTwice,
}

/// Failure while running one module of a program.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("module `{token}`: {source}")]
pub struct ModuleError {
    pub token: String,
    #[source]
    pub source: TensorError,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("type error at node `{token}` (path {path:?}): {message}")]
pub struct TypeError {
    pub token: String,
    /// Child indices from the root down to the offending node.
    pub path: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("cannot place {objects} objects: need 3..=8 and at most {cells} grid cells")]
    Infeasible { objects: usize, cells: usize },
    #[error("template {template} not instantiable on this scene")]
    Uninstantiable { template: String },
    #[error("symbolic execution failed at `{token}`: {reason}")]
    Execution { token: String, reason: String },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("blob truncated while reading `{name}`: need bytes {start}..{end}, blob has {len}")]
    Truncated {
        name: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("manifest inconsistent: {0}")]
    Inconsistent(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("incompatible: {0}")]
    Incompatible(String),
}

impl FormatError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("non-finite loss at sample {sample}")]
    NonFiniteLoss { sample: String },
}

impl Error {
    /// Short machine-parsable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Tensor(_) | Error::Module(_) => "shape",
            Error::Parse(_) => "parse",
            Error::Type(_) => "type",
            Error::Scene(_) => "scene",
            Error::Format(FormatError::Io { .. }) => "io",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::NonFiniteLoss { .. } => "numeric",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
