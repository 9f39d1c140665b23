use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("{0} over an empty axis")]
    EmptyAxis(&'static str),

    #[error("attention needs at least one key")]
    NoKeys,

    #[error("empty polyline")]
    EmptyPolyline,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate heading for target agent {0}: zero displacement and no heading field")]
    DegenerateHeading(String),

    #[error("line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("empty goal field")]
    EmptyField,

    #[error("empty dataset{0}")]
    EmptyDataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape { op, detail: detail.into() })
}
