use std::path::PathBuf;

use adtool_core::AdError;
use serde_json::{json, Value};
use thiserror::Error;

use crate::format::FormatError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Core(#[from] AdError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Format { source, .. } => source.kind(),
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "IoError",
            CliError::Usage(_) => "UsageError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `{"error":{"kind":…,"message":…}}`, with `line` and `col` for
    /// syntax errors.
    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Format {
            source: FormatError::Parse { line, col, .. },
            ..
        } = self
        {
            body["line"] = json!(line);
            body["col"] = json!(col);
        }
        json!({ "error": body })
    }
}
