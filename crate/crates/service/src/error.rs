use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::Value;

/// Error body returned by every endpoint: `{code, message, detail}`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code, message: message.into(), detail: Value::Null } }
    }

    pub fn detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn storage(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_failure", err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<uqd_core::Error> for ApiError {
    fn from(err: uqd_core::Error) -> Self {
        use uqd_core::Error as E;
        match &err {
            E::UnknownCase(id) => ApiError::not_found("unknown_case", err.to_string()).detail(Value::String(id.clone())),
            E::Io(_) | E::Json(_) => ApiError::storage(&err),
            E::EmptyDataset => ApiError::not_found("no_records", err.to_string()),
            E::InsufficientCases(_) | E::InsufficientSubjects(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_data", err.to_string())
            }
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_value", err.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request("malformed request body").detail(Value::String(r.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request("malformed query string").detail(Value::String(r.body_text()))
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request("malformed path").detail(Value::String(r.body_text()))
    }
}
