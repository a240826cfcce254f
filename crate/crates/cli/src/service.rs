//! JSON-over-HTTP session service for post-hoc selection queries.
//!
//! A session fixes one p-value vector, α and combiner. Its closed-testing
//! lattice is built once at creation (when `n` is within the lattice cap)
//! and never changes, so every selection query against the session reads
//! the same lattice and all answers hold simultaneously.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use pconj_core::{
    build_lattice, report_bound, resolve_selection, AnalysisConfig, BoundReport, CombinerKind, Error as CoreError,
    Hypothesis, IntersectionLattice, LatticeSnapshot, PValueVector, LATTICE_CAP,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

/// Largest vector accepted by `POST /sessions`.
pub const SERVICE_MAX_N: usize = 10_000;

pub struct Session {
    pub session_id: String,
    pub vector: PValueVector,
    pub lattice: Option<IntersectionLattice>,
    pub config: AnalysisConfig,
    pub created_at: DateTime<Utc>,
    pub report: BoundReport,
}

impl Session {
    fn new(session_id: String, vector: PValueVector, config: AnalysisConfig, created_at: DateTime<Utc>) -> Result<Self, ApiError> {
        let lattice = if vector.len() <= LATTICE_CAP {
            Some(build_lattice(&vector, config.alpha, config.combiner).map_err(ApiError::from)?)
        } else {
            None
        };
        let report = report_bound(&vector, &config.combiner, config.alpha);
        Ok(Session {
            session_id,
            vector,
            lattice,
            config,
            created_at,
            report,
        })
    }

    fn view(&self) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            n: self.vector.len(),
            alpha: self.config.alpha.get(),
            combiner: self.config.combiner,
            created_at: self.created_at,
            lattice: if self.lattice.is_some() {
                "enabled".into()
            } else {
                "disabled, full-set bounds only".into()
            },
            post_hoc_enabled: self.lattice.is_some(),
            report: self.report.clone(),
        }
    }

    fn to_snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.session_id.clone(),
            created_at: self.created_at,
            config: self.config,
            pvalues: self.vector.hypotheses().to_vec(),
            lattice: self.lattice.as_ref().map(IntersectionLattice::to_snapshot),
        }
    }

    fn from_snapshot(snap: SessionSnapshot) -> anyhow::Result<Self> {
        let vector = PValueVector::new(snap.pvalues)?;
        let lattice = match &snap.lattice {
            Some(l) => {
                let restored = IntersectionLattice::from_snapshot(&vector, l)?;
                anyhow::ensure!(
                    restored.alpha() == snap.config.alpha && restored.combiner() == snap.config.combiner,
                    "lattice was built with a different alpha or combiner"
                );
                Some(restored)
            }
            None if vector.len() <= LATTICE_CAP => Some(build_lattice(&vector, snap.config.alpha, snap.config.combiner)?),
            None => None,
        };
        let report = report_bound(&vector, &snap.config.combiner, snap.config.alpha);
        Ok(Session {
            session_id: snap.session_id,
            vector,
            lattice,
            config: snap.config,
            created_at: snap.created_at,
            report,
        })
    }
}

/// On-disk form of a session.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub config: AnalysisConfig,
    pub pvalues: Vec<Hypothesis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub n: usize,
    pub alpha: f64,
    pub combiner: CombinerKind,
    pub created_at: DateTime<Utc>,
    pub lattice: String,
    pub post_hoc_enabled: bool,
    pub report: BoundReport,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub pvalues: Vec<Hypothesis>,
    pub alpha: f64,
    #[serde(default = "default_combiner")]
    pub combiner: CombinerKind,
}

fn default_combiner() -> CombinerKind {
    CombinerKind::Fisher
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResponse {
    pub session_id: String,
    pub alpha: f64,
    pub combiner: CombinerKind,
    pub selection: Vec<String>,
    pub size: usize,
    pub f_alpha: usize,
    pub witness: Option<Vec<String>>,
    /// Bounds from one closed-testing lattice hold jointly over all
    /// selections queried against it.
    pub simultaneous: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_json(e: serde_json::Error) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::UnknownId(_) => "unknown_id",
            CoreError::EmptySelection => "empty_selection",
            CoreError::CapExceeded { .. } => "lattice_disabled",
            CoreError::Parse { .. } => "invalid_json",
            _ => "validation",
        };
        let status = match &e {
            CoreError::CapExceeded { .. } => StatusCode::CONFLICT,
            CoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": { "code": self.code, "message": self.message } })),
        )
            .into_response()
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    snapshot_dir: Option<PathBuf>,
}

impl AppState {
    pub fn in_memory() -> Arc<Self> {
        Arc::new(AppState::default())
    }

    /// State persisted as one JSON file per session under `dir`; existing
    /// snapshots there are loaded.
    pub fn with_snapshots(dir: impl Into<PathBuf>) -> anyhow::Result<Arc<Self>> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                match load_snapshot(&path) {
                    Ok(s) => {
                        sessions.insert(s.session_id.clone(), Arc::new(s));
                    }
                    Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session snapshot"),
                }
            }
        }
        tracing::info!(count = sessions.len(), dir = %dir.display(), "loaded session snapshots");
        Ok(Arc::new(AppState {
            sessions: RwLock::new(sessions),
            snapshot_dir: Some(dir),
        }))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }
}

fn load_snapshot(path: &Path) -> anyhow::Result<Session> {
    let text = std::fs::read_to_string(path)?;
    Session::from_snapshot(serde_json::from_str(&text)?)
}

fn write_snapshot(dir: &Path, session: &Session) -> std::io::Result<()> {
    let body = serde_json::to_vec(&session.to_snapshot()).map_err(std::io::Error::other)?;
    let tmp = dir.join(format!(".{}.tmp", session.session_id));
    std::fs::write(&tmp, body)?;
    std::fs::rename(tmp, dir.join(format!("{}.json", session.session_id)))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/report", get(get_report))
        .route("/sessions/{id}/selection", post(query_selection))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSessionRequest = serde_json::from_slice(&body).map_err(ApiError::bad_json)?;
    if req.pvalues.len() > SERVICE_MAX_N {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_many_hypotheses",
            format!("{} hypotheses exceeds the service limit of {SERVICE_MAX_N}", req.pvalues.len()),
        ));
    }
    let config = AnalysisConfig::new(req.alpha, req.combiner)?;
    let vector = PValueVector::new(req.pvalues)?;
    let id = uuid::Uuid::new_v4().simple().to_string();

    let session = tokio::task::spawn_blocking(move || Session::new(id, vector, config, Utc::now()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    if let Some(dir) = &state.snapshot_dir {
        write_snapshot(dir, &session)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "snapshot_failed", e.to_string()))?;
    }
    tracing::info!(
        session_id = %session.session_id,
        alpha = session.config.alpha.get(),
        combiner = %session.config.combiner,
        n = session.vector.len(),
        lattice = session.lattice.is_some(),
        "session created"
    );
    let view = session.view();
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(session.session_id.clone(), Arc::new(session));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

fn lookup(state: &AppState, id: &str) -> Result<Arc<Session>, ApiError> {
    state
        .session(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id}")))
}

async fn get_report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(lookup(&state, &id)?.view()))
}

async fn query_selection(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SelectionResponse>, ApiError> {
    let session = lookup(&state, &id)?;
    let req: SelectionRequest = serde_json::from_slice(&body).map_err(ApiError::bad_json)?;
    let lattice = session.lattice.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "lattice_disabled",
            format!(
                "session has {} hypotheses; post-hoc selection needs n <= {LATTICE_CAP}",
                session.vector.len()
            ),
        )
    })?;
    let selection = resolve_selection(&session.vector, &req.ids)?;
    let bound = lattice.selection_bound(&selection)?;
    Ok(Json(SelectionResponse {
        session_id: session.session_id.clone(),
        alpha: session.config.alpha.get(),
        combiner: session.config.combiner,
        selection: bound.selection,
        size: bound.size,
        f_alpha: bound.f_alpha,
        witness: bound.witness,
        simultaneous: true,
    }))
}

/// Bind and serve until Ctrl-C.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
