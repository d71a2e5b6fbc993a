use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    ids: Vec<String>,
}

/// JSON error response: `{"error": ..., "file"?, "line"?, "ids"?}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: message.into(),
                file: None,
                line: None,
                ids: Vec::new(),
            },
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }

    /// Validation errors get `status`; environment errors become 500.
    pub fn from_core(err: icq_core::Error, status: StatusCode) -> Self {
        use icq_core::Error as E;
        let status = if err.is_validation() {
            status
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        let mut e = Self::new(status, err.to_string());
        match err {
            E::MalformedLine { path, line, .. } => {
                e.body.file = Some(path.display().to_string());
                e.body.line = Some(line);
            }
            E::MissingPredictions(ids)
            | E::UnknownPredictionIds(ids)
            | E::SidecarUnknownIds(ids) => {
                e.body.ids = ids;
            }
            E::DuplicatePrediction(id) | E::PredictionLabel { id, .. } => e.body.ids = vec![id],
            _ => {}
        }
        e
    }

    pub fn message(&self) -> &str {
        &self.body.error
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(self.body)).into_response()
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::internal(e)
    }
}
