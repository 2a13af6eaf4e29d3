use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("label error{}: {value:?} is not a label of task {task}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Label {
        row: Option<usize>,
        value: String,
        task: String,
    },

    #[error("duplicate instance id {0:?}")]
    DuplicateId(String),

    #[error("instance {0:?} has no label")]
    UnlabeledInstance(String),

    #[error("label scheme mismatch: task {left} vs task {right}")]
    SchemeMismatch { left: String, right: String },

    #[error("invalid instance {id:?}: {reason}")]
    InvalidInstance { id: String, reason: String },

    #[error("image for {id:?} unreadable at {}: {source}", path.display())]
    ImageUnreadable {
        id: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("provider {provider} failed: {message}")]
    Provider { provider: String, message: String },

    #[error("request budget of {0} calls exhausted")]
    BudgetExhausted(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("instance {0:?} has empty text")]
    EmptyText(String),

    #[error("no <label> tag pair in response {0:?}")]
    Parse(String),

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("ensemble spec error: {0}")]
    Spec(String),

    #[error("no evaluation report for member {0:?}")]
    MissingReport(String),

    #[error("unknown report format {0:?}")]
    UnknownFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn provider(provider: impl Into<String>, message: impl ToString) -> Self {
        Error::Provider {
            provider: provider.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of an external OCR, translation, LLM or model backend.
    pub fn is_provider(&self) -> bool {
        matches!(
            self,
            Error::Provider { .. } | Error::BudgetExhausted(_) | Error::Backend(_)
        )
    }
}
