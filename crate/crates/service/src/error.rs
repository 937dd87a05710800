use thiserror::Error;

use lineup_core::evolve::SearchError;
use lineup_core::facespace::FaceSpaceError;
use lineup_core::imagecore::ImageError;
use lineup_core::turing::TuringError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    /// The request was well-formed but conflicts with the session's state.
    #[error("{message}")]
    Conflict { code: &'static str, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("corrupt event log for session {session}: {message}")]
    Corrupt { session: String, message: String },
    #[error("storage: {0}")]
    Storage(#[from] std::io::Error),
    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::Conflict {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict { code, .. } => code,
            Self::Invalid(_) => "invalid",
            Self::Unavailable(_) => "unavailable",
            Self::Corrupt { .. } => "corrupt",
            Self::Storage(_) => "storage",
            Self::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            Self::NotFound(_) => 404,
            Self::Conflict { .. } => 409,
            Self::Invalid(_) | Self::Unavailable(_) => 422,
            Self::Corrupt { .. } | Self::Storage(_) | Self::Internal(_) => 500,
        }
    }
}

impl From<SearchError> for ServiceError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::InvalidConfig(_) | SearchError::InvalidBallot(_) | SearchError::Shape(_) => {
                Self::Invalid(e.to_string())
            }
            SearchError::SearchComplete(_) => Self::conflict("search_complete", e.to_string()),
            SearchError::Protocol(_) => Self::conflict("stale_ballot", e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<TuringError> for ServiceError {
    fn from(e: TuringError) -> Self {
        match e {
            TuringError::InvalidRange(_) | TuringError::InvalidArgument(_) | TuringError::EmptyPool(_) => {
                Self::Invalid(e.to_string())
            }
            _ => Self::Internal(e.to_string()),
        }
    }
}

impl From<FaceSpaceError> for ServiceError {
    fn from(e: FaceSpaceError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<ImageError> for ServiceError {
    fn from(e: ImageError) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Invalid(e.to_string())
    }
}
