use std::fmt;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor had the wrong extent on some axis.
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Invalid model or training configuration, caught at build time.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config file could not be parsed.
    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    /// `backward` was called on a value that is not connected to any
    /// differentiable leaf.
    #[error("no graph: tensor does not require grad")]
    NoGraph,

    /// A binary file was malformed.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A non-finite value was found where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Class label outside `[0, classes)`.
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// Training loss became non-finite; the last completed epoch's
    /// checkpoint is left in place.
    #[error("training diverged in epoch {epoch}: {msg}")]
    Diverged { epoch: usize, msg: String },

    /// A checkpoint does not fit the model it is loaded into.
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl fmt::Display) -> Self {
        Error::Shape {
            op,
            detail: detail.to_string(),
        }
    }
}
