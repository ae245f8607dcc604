use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PbaError>;

#[derive(Debug, Error)]
pub enum PbaError {
    #[error("argument error: {0}")]
    Argument(String),

    /// A variance matrix has an eigenvalue more negative than the PSD tolerance allows.
    #[error("specification error: {what} is indefinite (eigenvalue {eigenvalue:e}, largest {largest:e})")]
    Specification {
        what: String,
        eigenvalue: f64,
        largest: f64,
    },

    #[error("degenerate denominator: {0}")]
    Degenerate(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("basis policy error: {0}")]
    Policy(String),

    #[error("collinear basis terms: {}", terms.join(", "))]
    Collinearity { terms: Vec<String> },

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("mixing diagnostic: {0}")]
    Mixing(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PbaError>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt artifact {}: {reason}", path.display())]
    Artifact { path: PathBuf, reason: String },
}

impl PbaError {
    pub fn stage(stage: &'static str) -> impl FnOnce(PbaError) -> PbaError {
        move |source| PbaError::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PbaError {
        let path = path.into();
        move |source| PbaError::Io { path, source }
    }

    /// Innermost error, looking through stage tags.
    pub fn root(&self) -> &PbaError {
        match self {
            PbaError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI: 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            PbaError::Config(_) => 2,
            _ => 3,
        }
    }
}
