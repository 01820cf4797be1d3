//! Live piloting service: sessions step the plant and world at a fixed rate,
//! take pilot inputs over a WebSocket, stream telemetry frames with periodic
//! prediction overlays, and record each flight as a trial file.

pub mod server;
pub mod session;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};

pub use server::{router, run, serve, AppState, ServerConfig};
pub use session::{ClientMessage, Frame, Overlay, OverlayConfig, Phase, Session};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Core(#[from] gmreach::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Storage(_) | ServiceError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (
            status,
            axum::Json(serde_json::json!({ "error": self.to_string() })),
        )
            .into_response()
    }
}
