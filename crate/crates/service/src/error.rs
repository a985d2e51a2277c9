use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;
use xfr_core::pipeline::PipelineError;
use xfr_core::qa::QaError;
use xfr_core::verify::{PairSide, VerifyError};

/// An error response: status plus a stable machine-readable code.
#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    /// Which upload the error concerns, when it concerns one.
    pub image: Option<&'static str>,
}

#[derive(Serialize)]
struct Body<'a> {
    error: Detail<'a>,
}

#[derive(Serialize)]
struct Detail<'a> {
    code: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image: Option<&'a str>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            image: None,
        }
    }

    pub fn for_image(mut self, part: &'static str) -> Self {
        self.image = Some(part);
        self
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "SESSION_NOT_FOUND", format!("no session {id}"))
    }

    pub fn session_expired(id: &str) -> Self {
        Self::new(StatusCode::GONE, "SESSION_EXPIRED", format!("session {id} has expired"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", message)
    }

    fn backend(message: impl Into<String>) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "BACKEND_UNAVAILABLE", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: Detail {
                code: self.code,
                message: &self.message,
                image: self.image,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

pub fn part_name(side: PairSide) -> &'static str {
    match side {
        PairSide::A => "image_a",
        PairSide::B => "image_b",
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Pair(p) => {
                let part = part_name(p.side);
                match p.source {
                    VerifyError::NoFaceFound => {
                        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "NO_FACE_FOUND", format!("no face found in {part}"))
                            .for_image(part)
                    }
                    VerifyError::DegenerateLandmarks(a) => {
                        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "ALIGNMENT_FAILED", format!("{part}: {a}"))
                            .for_image(part)
                    }
                    VerifyError::BackendFailure(b) => Self::backend(b.to_string()).for_image(part),
                    other => Self::internal(format!("{part}: {other}")),
                }
            }
            PipelineError::Verify(VerifyError::BackendFailure(b)) => Self::backend(b.to_string()),
            PipelineError::Saliency(xfr_core::saliency::SaliencyError::ScorerFailure(m)) => Self::backend(m),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::EmptyQuestion => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "EMPTY_QUESTION", e.to_string()),
            QaError::BackendFailure(b) => Self::backend(b.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}
