use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("evaluation produced a non-finite value: {0}")]
    Evaluation(String),

    #[error("linear solver failed: {0}")]
    Solver(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("optimization diverged at step {step}: {reason}")]
    Optimization { step: usize, reason: String },

    #[error("bad magic in tensor file (expected CFT1, found {0:?})")]
    BadMagic([u8; 4]),

    #[error("truncated tensor file: {0}")]
    Truncated(String),

    #[error("dimension overflow in tensor file header: {0}")]
    DimOverflow(String),

    #[error("missing role: {0}")]
    MissingRole(String),

    #[error("invalid scene spec: {0}")]
    Spec(String),

    #[error("stage {stage} failed at frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage and frame it occurred in.
    pub fn at_stage(self, stage: &'static str, frame: usize) -> Self {
        Error::Stage {
            stage,
            frame,
            source: Box::new(self),
        }
    }

    /// True for failures of numerical procedures rather than of inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Evaluation(_) | Error::Solver(_) | Error::Optimization { .. } => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
