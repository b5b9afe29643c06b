use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::session::{CreateSessionRequest, FeedbackRequest, SessionHandle, SessionManager, SessionStatus};

type Shared = State<Arc<SessionManager>>;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/prompt", get(prompt))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(manager)
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    b.map(|Json(t)| t).map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn create(State(m): Shared, b: Result<Json<CreateSessionRequest>, JsonRejection>) -> Result<Response, ServiceError> {
    let created = m.create(&body(b)?)?;
    tracing::info!(session = %created.session_id, "session created");
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn prompt(State(m): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(m.prompt(&id)?).into_response())
}

async fn feedback(
    State(m): Shared,
    Path(id): Path<String>,
    b: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    // Unknown ids win over malformed bodies.
    m.get(&id)?;
    Ok(Json(m.submit(&id, &body(b)?)?).into_response())
}

async fn log(State(m): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(m.log(&id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    from: usize,
}

async fn stream(
    State(m): Shared,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ServiceError> {
    let handle = m.get(&id)?;
    Ok(ws.on_upgrade(move |socket| push_rows(socket, handle, q.from)))
}

/// Sends rows from `sent` on, then every new row, and closes after the last
/// row of a finished session.
async fn push_rows(mut socket: WebSocket, handle: Arc<SessionHandle>, mut sent: usize) {
    let mut changes = handle.subscribe();
    loop {
        let (rows, finished) = {
            let s = handle.lock();
            (s.rows_from(sent), s.status() == SessionStatus::Finished)
        };
        for row in rows {
            let Ok(text) = serde_json::to_string(&row) else { return };
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
            sent += 1;
        }
        if finished {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = changes.changed() => {
                if changed.is_err() {
                    return;
                }
            }
            msg = socket.recv() => match msg {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
