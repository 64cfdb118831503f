//! Local label server for pairwise trajectory preferences.
//!
//! Raters fetch a pair from `GET /api/pair/next`, answer with
//! `POST /api/vote`, and `GET /api/session/export` turns the vote log into
//! [`trex_core::demos::VoteRecord`]s for `aggregate_votes`. Every vote is
//! appended to a JSONL log before it is acknowledged, so a restarted server
//! replays to the same state.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub mod session;

pub use session::{export_votes, Choice, LabelSession, SessionError, DEFAULT_TARGET_VOTES};

const DEFAULT_INDEX: &str = include_str!("../static/index.html");

pub const DEFAULT_ADDR: &str = "127.0.0.1:8737";

#[derive(Clone, Default)]
pub struct AppState {
    session: Arc<RwLock<Option<LabelSession>>>,
}

impl AppState {
    pub fn new(session: Option<LabelSession>) -> Self {
        AppState { session: Arc::new(RwLock::new(session)) }
    }

    /// Runs `f` on the open session, if any.
    pub fn with_session<T>(&self, f: impl FnOnce(&LabelSession) -> T) -> Option<T> {
        self.session.read().expect("session lock").as_ref().map(f)
    }
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum NextPair {
    Pair {
        pair_id: String,
        traj_a: session::TrajView,
        traj_b: session::TrajView,
        grid: session::Grid,
    },
    Complete,
}

#[derive(Deserialize)]
struct VoteBody {
    pair_id: String,
    choice: Choice,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn no_session() -> Response {
    error(StatusCode::CONFLICT, "no labeling session is open")
}

async fn next_pair(State(state): State<AppState>) -> Response {
    let next = state.with_session(|s| match s.next_pair() {
        None => NextPair::Complete,
        Some(p) => NextPair::Pair {
            pair_id: p.pair_id,
            traj_a: s.trajectory(p.left).expect("pair in range").clone(),
            traj_b: s.trajectory(p.right).expect("pair in range").clone(),
            grid: s.grid().clone(),
        },
    });
    match next {
        Some(n) => Json(n).into_response(),
        None => no_session(),
    }
}

async fn vote(State(state): State<AppState>, body: Bytes) -> Response {
    let body: VoteBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed vote: {e}")),
    };
    let mut guard = state.session.write().expect("session lock");
    let Some(session) = guard.as_mut() else {
        return no_session();
    };
    match session.vote(&body.pair_id, body.choice) {
        Ok(ack) => Json(ack).into_response(),
        Err(e @ SessionError::UnknownPair(_)) => error(StatusCode::NOT_FOUND, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn export(State(state): State<AppState>) -> Response {
    Json(state.with_session(|s| s.export()).unwrap_or_default()).into_response()
}

async fn status(State(state): State<AppState>) -> Response {
    match state.with_session(|s| s.status()) {
        Some(st) => Json(st).into_response(),
        None => no_session(),
    }
}

async fn index() -> Html<&'static str> {
    Html(DEFAULT_INDEX)
}

/// The HTTP API, with static assets from `static_dir` (or a built-in page).
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/pair/next", get(next_pair))
        .route("/api/vote", post(vote))
        .route("/api/session", get(status))
        .route("/api/session/export", get(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(index)),
    }
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("label server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
