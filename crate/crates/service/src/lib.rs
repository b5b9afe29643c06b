//! Live preference sessions over HTTP and WebSocket.
//!
//! Each session owns a plant and a dueling controller. A human answers one
//! pairwise comparison per step through the JSON API; the plant advances
//! exactly one step per answer.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | create from a builtin preset or a config |
//! | `GET /sessions/{id}/prompt` | pending comparison |
//! | `POST /sessions/{id}/feedback` | `{step, choice}` with choice `current` or `previous` |
//! | `GET /sessions/{id}/log` | logged rows |
//! | `GET /sessions/{id}/stream?from=0` | WebSocket of log rows, replayed from `from` |

pub mod api;
pub mod error;
pub mod session;

use std::sync::Arc;

pub use api::router;
pub use error::ServiceError;
pub use session::{
    default_safety_box, resolve_request, Choice, ComparisonPrompt, CreateSessionRequest, DeadlinePolicy, FeedbackAck,
    FeedbackRequest, LogRow, Observables, ServiceConfig, Session, SessionCreated, SessionLog, SessionManager,
    SessionStatus,
};

/// Serves the API on `listener` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let app = router(Arc::new(SessionManager::new(config)));
    axum::serve(listener, app).await
}
