//! Error type shared by every stage of the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ToolshedError>;

/// Everything that can go wrong while ingesting, indexing, retrieving or
/// evaluating.
#[derive(Debug, Error)]
pub enum ToolshedError {
    /// A record could not be parsed at all.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A record parsed but violates the expected schema.
    #[error("schema error{}: {message}", line_suffix(*.line))]
    Schema { line: Option<usize>, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A remote embedder or LLM failed.
    #[error("provider error: {message}{}", retry_suffix(*.status, *.retryable, *.retry_after_secs))]
    Provider {
        message: String,
        status: Option<u16>,
        retryable: bool,
        retry_after_secs: Option<u64>,
    },

    /// A caller broke an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index build error: {0}")]
    Build(String),

    #[error("index load error at byte offset {offset}: {message}")]
    Load { offset: usize, message: String },

    /// Query transformation produced output the pipeline cannot use.
    #[error("pipeline error: {message}")]
    Pipeline { message: String, raw: Option<String> },

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

fn retry_suffix(status: Option<u16>, retryable: bool, retry_after: Option<u64>) -> String {
    let mut out = String::new();
    if let Some(code) = status {
        out.push_str(&format!(" (status {code}"));
    } else {
        out.push_str(" (no status");
    }
    out.push_str(if retryable { ", retryable" } else { ", not retryable" });
    if let Some(secs) = retry_after {
        out.push_str(&format!(", retry after {secs}s"));
    }
    out.push(')');
    out
}

impl ToolshedError {
    pub fn schema(line: Option<usize>, message: impl Into<String>) -> Self {
        ToolshedError::Schema { line, message: message.into() }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        ToolshedError::Contract(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        ToolshedError::Config(message.into())
    }

    /// True for failures caused by the environment (files, network) rather
    /// than by the data or configuration.
    pub fn is_environmental(&self) -> bool {
        matches!(self, ToolshedError::Io(_) | ToolshedError::Provider { .. })
    }

    /// Prefix the message with where in a multi-step computation it happened.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            ToolshedError::Provider { message, status, retryable, retry_after_secs } => {
                ToolshedError::Provider {
                    message: format!("{what}: {message}"),
                    status,
                    retryable,
                    retry_after_secs,
                }
            }
            ToolshedError::Pipeline { message, raw } => {
                ToolshedError::Pipeline { message: format!("{what}: {message}"), raw }
            }
            ToolshedError::Contract(m) => ToolshedError::Contract(format!("{what}: {m}")),
            ToolshedError::Config(m) => ToolshedError::Config(format!("{what}: {m}")),
            ToolshedError::Model(m) => ToolshedError::Model(format!("{what}: {m}")),
            ToolshedError::Build(m) => ToolshedError::Build(format!("{what}: {m}")),
            other => other,
        }
    }
}
