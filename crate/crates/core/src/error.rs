use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed to converge or produced a non-finite value.
    #[error("numeric error: {message}{}", diagnostics.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    Numeric {
        message: String,
        diagnostics: Option<String>,
    },

    /// A configuration field is missing, malformed or inconsistent.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// The request is valid in principle but not implemented for this input class.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            diagnostics: None,
        }
    }

    pub(crate) fn numeric_with(msg: impl Into<String>, diagnostics: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
            diagnostics: Some(diagnostics.into()),
        }
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }
}
