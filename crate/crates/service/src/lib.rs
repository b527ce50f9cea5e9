//! HTTP session service for interactive belief propagation.
//!
//! | route | body | reply |
//! |---|---|---|
//! | `POST /sessions` | [`api::CreateSession`] | [`api::SessionCreated`] (201) |
//! | `POST /sessions/{id}/corrections` | [`api::CorrectionsRequest`] | [`api::CorrectionsApplied`] |
//! | `GET /sessions/{id}/state` | | [`api::StateBody`] |
//! | `GET /sessions/{id}/attention?unit=i` | | [`api::AttentionBody`] |
//!
//! Errors are `{"error": "..."}` with status 400 (validation, bad unit),
//! 404 (unknown session), 409 (stale revision) or 422 (malformed correction).

pub mod api;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};

use api::{ApiError, AttentionBody, CorrectionsApplied, GridMeta, SessionCreated, StateBody};
use session::{Session, SessionFile, SessionSource, Snapshot, DEFAULT_SWEEPS};

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    default_source: Option<Arc<SessionSource>>,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(default_source: Option<SessionSource>, snapshot_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            default_source: default_source.map(Arc::new),
            snapshot_dir,
        }
    }

    /// Restores every `*.json` session file in the snapshot directory.
    pub fn load_snapshots(&self) -> Result<usize, String> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(0);
        };
        let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let mut count = 0;
        for entry in entries {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let file: SessionFile =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            let session = file.restore().map_err(|e| format!("{}: {e}", path.display()))?;
            self.insert(session);
            count += 1;
        }
        Ok(count)
    }

    fn insert(&self, session: Session) -> Arc<Session> {
        let session = Arc::new(session);
        self.sessions
            .write()
            .expect("session table lock")
            .insert(session.id.clone(), session.clone());
        session
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, session: &Session, snap: &Snapshot) -> Result<(), ApiError> {
        if let Some(dir) = &self.snapshot_dir {
            session::write_session_file(dir, &SessionFile::capture(session, snap)).map_err(|e| {
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    format!("writing session snapshot: {e}"),
                )
            })?;
        }
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/corrections", post(post_corrections))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/attention", get(get_attention))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req = api::parse_create(&body)?;
    let default = state.default_source.clone();
    let (source, snap) = blocking(move || {
        let source = SessionSource::from_request(req, default.as_deref())?;
        let snap = Snapshot::initial(&source)?;
        Ok((source, snap))
    })
    .await?;
    let p = &source.model.params;
    let body = SessionCreated {
        session: uuid::Uuid::new_v4().simple().to_string(),
        revision: snap.revision,
        n: p.n(),
        d: p.d(),
        m: p.m(),
        grid: GridMeta::for_units(p.n()),
        label_count: source.label_count(),
        values: snap.values.clone(),
        labels: snap.labels.clone(),
    };
    let session = state.insert(Session::new(body.session.clone(), Arc::new(source), snap));
    state.persist(&session, &session.snapshot())?;
    Ok((StatusCode::CREATED, Json(body)))
}

async fn post_corrections(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CorrectionsApplied>, ApiError> {
    let session = state.get(&id)?;
    let req = api::parse_corrections(&body)?;
    let _writer = session.writer.lock().await;
    let prev = session.snapshot();
    if let Some(r) = req.revision {
        if r != prev.revision {
            return Err(ApiError::conflict(prev.revision, r));
        }
    }
    let batch = session::resolve(&session.source, &req)?;
    if batch.is_empty() {
        return Ok(Json(session::unchanged(&prev)));
    }
    let source = session.source.clone();
    let sweeps = req.sweeps.unwrap_or(DEFAULT_SWEEPS);
    let (snap, reply) = blocking(move || session::apply(&source, &prev, batch, sweeps)).await?;
    state.persist(&session, &snap)?;
    session.publish(snap);
    Ok(Json(reply))
}

async fn get_state(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<StateBody>, ApiError> {
    Ok(Json(state.get(&id)?.snapshot().state()))
}

async fn get_attention(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    RawQuery(query): RawQuery,
) -> Result<Json<AttentionBody>, ApiError> {
    let session = state.get(&id)?;
    let unit = api::parse_unit_param(query.as_deref())?;
    let snap = session.snapshot();
    Ok(Json(snap.attention(&session.source, unit)?))
}
