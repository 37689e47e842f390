use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use enclave_core::jobqueue::JobError;
use enclave_core::security::SecurityError;
use enclave_core::storage::StorageError;
use enclave_harness::HarnessError;
use serde::{Deserialize, Serialize};

/// Wire form of every error: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    pub fn unauthorized(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "INVALID_TOKEN", msg)
    }

    pub fn forbidden() -> Self {
        Self::new(StatusCode::FORBIDDEN, "ACCESS_DENIED", "access denied")
    }

    pub fn not_found(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", msg)
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "INVALID_BODY", msg)
    }

    pub fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", msg)
    }

    pub fn conflict(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "CONFLICT", msg)
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", msg)
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: ErrorDetail { code: self.code.to_owned(), message: self.message.clone() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        use StorageError::*;
        match e {
            AccessDenied => ApiError::forbidden(),
            NotFound(_) | NoSuchBucket(_) => ApiError::not_found(e.to_string()),
            DuplicateKey(_) => ApiError::conflict(e.to_string()),
            InvalidKey(_) | NonPositiveSize | Config(_) => ApiError::invalid(e.to_string()),
            // a bad or stale link is the caller's credential failing
            Expired | BadSignature => ApiError::new(StatusCode::FORBIDDEN, "URL_REJECTED", e.to_string()),
            MalformedUrl(_) => ApiError::bad_request(e.to_string()),
            TimeRegression { .. } | InvalidPeriod | Io(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::AccessDenied => ApiError::forbidden(),
            JobError::InvalidDescription(_) | JobError::InvalidMarker(_) => ApiError::invalid(e.to_string()),
            JobError::UnknownJob(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<SecurityError> for ApiError {
    fn from(e: SecurityError) -> Self {
        use SecurityError::*;
        match e {
            UnknownUser(_) | NotRegistered(_) | UnknownService(_) | BadCredentials(_) => {
                ApiError::unauthorized(e.to_string())
            }
            InvalidToken | Expired => ApiError::unauthorized(e.to_string()),
            AccessDenied | NotTrustedRole | NoActiveJobForUser(_) => ApiError::forbidden(),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => ApiError::invalid(m),
            HarnessError::Io(m) | HarnessError::Sim(m) => ApiError::internal(m),
        }
    }
}
