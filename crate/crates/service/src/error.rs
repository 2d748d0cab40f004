use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;

use crate::session::Step;

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    NotFound(String),

    #[error("step `{step}` has not been completed")]
    Prerequisite { step: Step },

    #[error("{0}")]
    Conflict(String),

    #[error("validation failed: {}", .0.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; "))]
    Validation(Vec<FieldError>),

    #[error(transparent)]
    Core(#[from] covbal_core::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        ServiceError::Validation(vec![FieldError { field: field.into(), message: message.into() }])
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Prerequisite { .. } | ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Core(covbal_core::Error::RolesMissing) => StatusCode::CONFLICT,
            ServiceError::Core(covbal_core::Error::Cancelled) => StatusCode::CONFLICT,
            ServiceError::Validation(_) | ServiceError::Core(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = match &self {
            ServiceError::Prerequisite { step } => json!({
                "error": self.to_string(),
                "missing_prerequisite": step,
            }),
            ServiceError::Validation(fields) => json!({ "error": self.to_string(), "fields": fields }),
            ServiceError::Core(e) => json!({
                "error": e.to_string(),
                "fields": [core_field(e)],
            }),
            _ => json!({ "error": self.to_string() }),
        };
        (self.status(), Json(body)).into_response()
    }
}

/// Best field attribution for a library error.
fn core_field(e: &covbal_core::Error) -> FieldError {
    use covbal_core::Error as E;
    let field = match e {
        E::Parse { .. } | E::Cell { .. } => "file".to_string(),
        E::Data(_) | E::RolesMissing => "roles".to_string(),
        E::NonConvergence { method, .. } | E::Infeasible { method, .. } => format!("method:{method}"),
        E::RankDeficient { context, .. } | E::Degenerate { context, .. } | E::InvalidArgument { context, .. } => {
            context.to_string()
        }
        E::Cancelled => "job".to_string(),
    };
    FieldError { field, message: e.to_string() }
}
