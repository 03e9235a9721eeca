use serde::Serialize;

/// A rejected configuration, pointing at the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(ConfigError),
    #[error("{0}")]
    InvalidRequest(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("the system is being reconfigured")]
    Reconfiguring,
    #[error("{0}")]
    NotConfigured(String),
    #[error("encoder unavailable: {0}")]
    EncoderUnavailable(String),
    #[error("{0}")]
    Internal(String),
}

/// Wire form of an error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl ServiceError {
    pub fn invalid_request(message: impl Into<String>) -> Self {
        Self::InvalidRequest(message.into())
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "invalid_config",
            Self::InvalidRequest(_) => "invalid_request",
            Self::UnknownSession(_) => "unknown_session",
            Self::NotFound(_) => "not_found",
            Self::Reconfiguring => "reconfiguring",
            Self::NotConfigured(_) => "not_configured",
            Self::EncoderUnavailable(_) => "encoder_unavailable",
            Self::Internal(_) => "internal",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Self::InvalidConfig(_) | Self::InvalidRequest(_) => 400,
            Self::UnknownSession(_) | Self::NotFound(_) => 404,
            Self::NotConfigured(_) => 409,
            Self::EncoderUnavailable(_) => 502,
            Self::Reconfiguring => 503,
            Self::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (message, field) = match self {
            Self::InvalidConfig(e) => (e.message.clone(), Some(e.field.clone())),
            other => (other.to_string(), None),
        };
        ErrorBody {
            code: self.code(),
            message,
            field,
        }
    }
}

impl From<ConfigError> for ServiceError {
    fn from(e: ConfigError) -> Self {
        Self::InvalidConfig(e)
    }
}

impl From<mqa_core::Error> for ServiceError {
    fn from(e: mqa_core::Error) -> Self {
        use mqa_core::Error as E;
        match e {
            E::NotFound(what) => Self::NotFound(what),
            E::EncoderUnavailable(msg) => Self::EncoderUnavailable(msg),
            E::IndexNotBuilt(msg) => Self::NotConfigured(msg),
            e @ (E::InvalidParameter(_)
            | E::DimensionMismatch { .. }
            | E::Decode(_)
            | E::SchemaViolation(_)
            | E::UnknownEncoder(_)) => Self::InvalidRequest(e.to_string()),
            other => Self::Internal(other.to_string()),
        }
    }
}
