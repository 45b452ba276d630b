//! JSON-over-HTTP wire protocol for [`ChatStore`].

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use facilitator_core::{AuthorId, Message};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::store::{ChatStore, NewMessage, Posted, StoreError};

/// Upper bound on a single long-poll.
pub const MAX_WAIT_MS: u64 = 30_000;

#[derive(Debug)]
pub enum ApiError {
    Store(StoreError),
    BadRequest(String),
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError::Store(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::UNPROCESSABLE_ENTITY, "Invalid", m),
            ApiError::Store(e) => {
                let (status, kind) = match &e {
                    StoreError::NoSuchRoom(_) => (StatusCode::NOT_FOUND, "NoSuchRoom"),
                    StoreError::RoomExists(_) => (StatusCode::CONFLICT, "RoomExists"),
                    StoreError::NotJoined { .. } => (StatusCode::FORBIDDEN, "NotJoined"),
                    StoreError::InvalidRoomId(_) => {
                        (StatusCode::UNPROCESSABLE_ENTITY, "InvalidRoomId")
                    }
                    StoreError::EmptyBody => (StatusCode::UNPROCESSABLE_ENTITY, "EmptyBody"),
                    StoreError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "Invalid"),
                    StoreError::CorruptLog { .. }
                    | StoreError::DataDirUnwritable { .. }
                    | StoreError::Io(_) => {
                        tracing::error!(error = %e, "storage failure");
                        (StatusCode::INTERNAL_SERVER_ERROR, "Storage")
                    }
                };
                (status, kind, e.to_string())
            }
        };
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRoom {
    room_id: String,
    #[serde(default)]
    agent_author: Option<AuthorId>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Join {
    author: AuthorId,
    display_name: String,
}

#[derive(Deserialize)]
struct ReadParams {
    #[serde(default = "from_start")]
    after_seq: i64,
    #[serde(default)]
    wait_ms: u64,
}

fn from_start() -> i64 {
    -1
}

/// Runs blocking store work (file appends, fsync) off the async workers.
async fn blocking<T, F>(store: &Arc<ChatStore>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&ChatStore) -> Result<T, StoreError> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::Store(StoreError::Io(std::io::Error::other(e))))?
        .map_err(ApiError::Store)
}

async fn list_rooms(State(store): State<Arc<ChatStore>>) -> Json<Vec<String>> {
    Json(store.list_rooms())
}

async fn create_room(
    State(store): State<Arc<ChatStore>>,
    body: Result<Json<CreateRoom>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let info = blocking(&store, move |s| {
        s.create_room(&req.room_id, req.agent_author)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn join(
    State(store): State<Arc<ChatStore>>,
    Path(room): Path<String>,
    body: Result<Json<Join>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    store.room(&room)?;
    let Json(req) = body?;
    let participant = blocking(&store, move |s| {
        s.join(&room, req.author, &req.display_name)
    })
    .await?;
    Ok(Json(participant))
}

async fn post_message(
    State(store): State<Arc<ChatStore>>,
    Path(room): Path<String>,
    body: Result<Json<NewMessage>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    store.room(&room)?;
    let Json(req) = body?;
    let (message, how) = blocking(&store, move |s| s.post_message(&room, req)).await?;
    let status = match how {
        Posted::Appended => StatusCode::CREATED,
        Posted::Duplicate => StatusCode::OK,
    };
    Ok((status, Json(message)))
}

async fn get_messages(
    State(store): State<Arc<ChatStore>>,
    Path(room): Path<String>,
    params: Result<Query<ReadParams>, QueryRejection>,
) -> ApiResult<Json<Vec<Message>>> {
    let room = store.room(&room)?;
    let Query(params) = params?;
    // Subscribe before reading so an append between the read and the wait
    // still wakes us.
    let mut changes = room.subscribe();
    let messages = room.messages_after(params.after_seq);
    if !messages.is_empty() || params.wait_ms == 0 {
        return Ok(Json(messages));
    }
    let wanted = usize::try_from(params.after_seq.saturating_add(1)).unwrap_or(0);
    let wait = Duration::from_millis(params.wait_ms.min(MAX_WAIT_MS));
    let _ = tokio::time::timeout(wait, changes.wait_for(|&len| len > wanted)).await;
    Ok(Json(room.messages_after(params.after_seq)))
}

async fn participants(
    State(store): State<Arc<ChatStore>>,
    Path(room): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(store.participants(&room)?))
}

/// Builds the service router. With `static_dir`, its files are served
/// under `/app`.
pub fn router(store: Arc<ChatStore>, static_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/rooms", get(list_rooms).post(create_room))
        .route("/rooms/{id}/join", post(join))
        .route("/rooms/{id}/messages", get(get_messages).post(post_message))
        .route("/rooms/{id}/participants", get(participants))
        .with_state(store);
    if let Some(dir) = static_dir {
        app = app.nest_service(
            "/app",
            ServeDir::new(dir).append_index_html_on_directories(true),
        );
    }
    app
}

/// Serves until `shutdown` resolves, then finishes in-flight requests.
pub async fn serve(
    listener: TcpListener,
    store: Arc<ChatStore>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    if let Ok(addr) = listener.local_addr() {
        tracing::info!(%addr, "chat service listening");
    }
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(shutdown)
        .await
}
