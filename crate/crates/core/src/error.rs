use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlnError {
    /// A parameter or input value outside the distribution's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Shapes, ranks or names that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A non-finite intermediate value.
    #[error("numeric error{}{}: {msg}", .row.map(|r| format!(" at row {r}")).unwrap_or_default(), .iter.map(|k| format!(" in iteration {k}")).unwrap_or_default())]
    Numeric {
        msg: String,
        row: Option<usize>,
        iter: Option<usize>,
    },

    /// The ridge needed to factor a system grew past its ceiling.
    #[error("singular system: ridge {tau:e} exceeds limit {limit:e}")]
    Singular { tau: f64, limit: f64 },

    #[error("inference error: {0}")]
    Inference(String),

    #[error("io error: {0}")]
    Io(String),
}

impl SlnError {
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        SlnError::Numeric {
            msg: msg.into(),
            row: None,
            iter: None,
        }
    }

    pub(crate) fn numeric_row(msg: impl Into<String>, row: usize) -> Self {
        SlnError::Numeric {
            msg: msg.into(),
            row: Some(row),
            iter: None,
        }
    }

    /// Attach an iteration index to a numeric error; other variants pass through.
    pub fn at_iteration(self, k: usize) -> Self {
        match self {
            SlnError::Numeric { msg, row, .. } => SlnError::Numeric {
                msg,
                row,
                iter: Some(k),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, SlnError>;

impl From<std::io::Error> for SlnError {
    fn from(e: std::io::Error) -> Self {
        SlnError::Io(e.to_string())
    }
}

impl From<csv::Error> for SlnError {
    fn from(e: csv::Error) -> Self {
        SlnError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SlnError {
    fn from(e: serde_json::Error) -> Self {
        SlnError::Io(e.to_string())
    }
}
