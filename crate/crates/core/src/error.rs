use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// One entry per violated schema or semantic rule.
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("id {id} out of range for lookup table with {len} rows")]
    Lookup { id: usize, len: usize },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("graph usage error: {0}")]
    Usage(String),

    #[error("model build error: {0}")]
    Build(String),

    #[error("capability error: {0}")]
    Capability(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Generation stopped early; `rows_written` rows are on disk.
    #[error("dataset generation aborted after {rows_written} rows (partial output): {source}")]
    PartialOutput {
        rows_written: usize,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 training/numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Build(_) | Error::Capability(_) => 1,
            Error::Io { .. }
            | Error::PartialOutput { .. }
            | Error::Data(_)
            | Error::Lookup { .. }
            | Error::Label { .. }
            | Error::Degenerate(_)
            | Error::Split(_)
            | Error::Evaluation(_)
            | Error::Checkpoint(_) => 2,
            Error::Shape { .. } | Error::Optimizer(_) | Error::Training(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
