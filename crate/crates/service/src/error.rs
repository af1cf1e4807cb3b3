use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use sentinel_core::api::ApiErrorBody;
use sentinel_core::ingest::IngestError;
use sentinel_core::pipeline::PipelineError;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ApiErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiErrorBody {
                code: code.to_string(),
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn with_field(mut self, field: &str) -> Self {
        self.body.field = Some(field.to_string());
        self
    }

    pub fn bad_request(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message).with_field(field)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let message = e.to_string();
        match e {
            IngestError::MalformedJson { .. } => Self::new(StatusCode::BAD_REQUEST, "MalformedJson", message),
            IngestError::SchemaViolation { path, .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "SchemaViolation", message).with_field(&path)
            }
            IngestError::OutOfOrder { .. } => Self::new(StatusCode::CONFLICT, "OutOfOrder", message),
            IngestError::FormatError { .. } | IngestError::ShortFile { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "FormatError", message)
            }
            IngestError::Corrupt { .. } | IngestError::Io(_) => Self::internal(message),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let message = e.to_string();
        match e {
            PipelineError::NoModel => Self::new(StatusCode::CONFLICT, "NoModel", message),
            PipelineError::EmptyWindow => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EmptyWindow", message),
            PipelineError::AlreadyCommitted(_) => Self::new(StatusCode::CONFLICT, "AlreadyCommitted", message),
            PipelineError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "NotFound", message),
            PipelineError::VerdictConflict { .. } => Self::new(StatusCode::CONFLICT, "VerdictConflict", message),
            PipelineError::SpecTooDense(_) | PipelineError::Invalid(_) => {
                Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
            }
            PipelineError::Ingest(inner) => inner.into(),
            PipelineError::Series(_) | PipelineError::Stage1(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidData", message)
            }
            PipelineError::Forecast(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ForecastFailed", message),
            PipelineError::Evt(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "TailFitFailed", message),
            PipelineError::Corrupt { .. } | PipelineError::Io(_) => Self::internal(message),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        Self::internal(format!("worker failed: {e}"))
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
