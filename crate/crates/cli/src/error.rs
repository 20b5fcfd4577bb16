use serde::Serialize;

/// Error reported to the user as a JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            message: message.into(),
            key: None,
            line: None,
        }
    }

    pub fn config(key: Option<&str>, line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            message: message.into(),
            key: key.map(str::to_string),
            line,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: format!("{}: {err}", path.display()),
            key: None,
            line: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "usage" => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<gqkd_core::Error> for CliError {
    fn from(e: gqkd_core::Error) -> Self {
        let key = match &e {
            gqkd_core::Error::InvalidParameter { field, .. } => Some(field.to_string()),
            _ => None,
        };
        Self {
            kind: "model",
            message: e.to_string(),
            key,
            line: None,
        }
    }
}
