use thiserror::Error;

pub type Result<T> = std::result::Result<T, VlqaError>;

#[derive(Debug, Error)]
pub enum VlqaError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("tree structure error: {0}")]
    Structure(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown question category {0}")]
    Category(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate variance: sigma_sem = {0} must be positive")]
    DegenerateVariance(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("checkpoint format version mismatch: file has v{found}, this build reads v{expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl VlqaError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        VlqaError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            VlqaError::Config(_)
            | VlqaError::CheckpointVersion { .. }
            | VlqaError::Category(_)
            | VlqaError::Precondition(_) => 2,
            VlqaError::Divergence { .. } | VlqaError::Numeric(_) => 4,
            _ => 3,
        }
    }
}
