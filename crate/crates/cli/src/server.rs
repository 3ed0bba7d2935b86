//! JSON control API for starting, watching and steering workflows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use taskweave_core::control::{FeedbackEnvelope, FeedbackError, FeedbackKind};
use taskweave_core::coordinator::{CoordinatorError, Engine, RunOptions, Workflow, WorkflowConfig, WorkflowDescriptor};

use crate::launch::{build_backend, BackendChoice};

const MAX_WAIT_MS: u64 = 30_000;

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Each workflow using `file_io` gets its own subdirectory here.
    pub workspace_root: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
    /// Static files served for any path the API does not claim.
    pub assets: Option<PathBuf>,
}

pub struct AppState {
    configs: BTreeMap<String, PathBuf>,
    runs: Mutex<BTreeMap<String, Workflow>>,
    options: ServerOptions,
}

impl AppState {
    pub fn new(configs: BTreeMap<String, PathBuf>, options: ServerOptions) -> Self {
        Self {
            configs,
            runs: Mutex::new(BTreeMap::new()),
            options,
        }
    }

    pub fn config_names(&self) -> Vec<String> {
        self.configs.keys().cloned().collect()
    }

    pub fn workflow(&self, id: &str) -> Option<Workflow> {
        self.runs.lock().expect("run table poisoned").get(id).cloned()
    }

    fn load(&self, name: &str, workflow_id: &str) -> Result<Option<WorkflowConfig>> {
        let Some(path) = self.configs.get(name) else {
            return Ok(None);
        };
        let mut config = WorkflowConfig::load(path)?;
        if let (Some(root), Some(_)) = (&self.options.workspace_root, &config.tools.workspace) {
            config.tools.workspace = Some(root.join(workflow_id));
        }
        Ok(Some(config))
    }
}

/// Finds workflow configs in `dir`: `*.toml`/`*.json` files and
/// `<sub>/workflow.{toml,json}`, keyed by the name they declare.
pub fn discover_configs(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut found = BTreeMap::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading workflow directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let candidate = if path.is_dir() {
            ["workflow.toml", "workflow.json"].iter().map(|f| path.join(f)).find(|p| p.is_file())
        } else if matches!(path.extension().and_then(|e| e.to_str()), Some("toml" | "json")) {
            Some(path)
        } else {
            None
        };
        let Some(file) = candidate else { continue };
        match WorkflowConfig::load(&file) {
            Ok(config) => {
                found.insert(config.name, file);
            }
            Err(e) => log::warn!("skipping {}: {e}", file.display()),
        }
    }
    Ok(found)
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/configs", get(list_configs))
        .route("/workflows", post(create).get(list))
        .route("/workflows/{id}", get(describe))
        .route("/workflows/{id}/events", get(events))
        .route("/workflows/{id}/feedback", post(feedback))
        .route("/workflows/{id}/pause", post(pause))
        .route("/workflows/{id}/resume", post(resume))
        .with_state(state.clone());
    match &state.options.assets {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("no such workflow '{id}'"))
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Workflow> {
    state.workflow(id).ok_or_else(|| not_found(id))
}

#[derive(Debug, Deserialize)]
struct CreateRequest {
    instruction: String,
    config_name: String,
}

async fn list_configs(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.config_names())
}

async fn create(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let id = uuid::Uuid::new_v4().to_string();
    let internal = |e: anyhow::Error| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"));
    let config = state
        .load(&req.config_name, &id)
        .map_err(internal)?
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("unknown config '{}'", req.config_name)))?;
    let backend = build_backend(&config, &BackendChoice::Config, 0).map_err(internal)?;
    let engine = Engine::new(config, backend).map_err(|e| internal(e.into()))?;
    let opts = RunOptions {
        workflow_id: Some(id.clone()),
        snapshot_dir: state.options.snapshot_dir.clone(),
        halt_after_completed: None,
    };
    let wf = engine.start(&req.instruction, &opts);
    state.runs.lock().expect("run table poisoned").insert(id.clone(), wf.clone());
    tokio::task::spawn_blocking(move || {
        let end = engine.drive(&wf, &opts);
        log::info!("workflow {} finished in {:?}", end.workflow_id, end.phase);
    });
    Ok((StatusCode::CREATED, Json(json!({"workflow_id": id}))))
}

async fn list(State(state): State<Arc<AppState>>) -> Json<Vec<WorkflowDescriptor>> {
    let runs: Vec<Workflow> = state.runs.lock().expect("run table poisoned").values().cloned().collect();
    Json(runs.iter().map(Workflow::descriptor).collect())
}

async fn describe(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<WorkflowDescriptor>> {
    Ok(Json(lookup(&state, &id)?.descriptor()))
}

#[derive(Debug, Deserialize)]
struct EventQuery {
    #[serde(default)]
    from: u64,
    /// Long-poll: wait up to this long for the first new event.
    #[serde(default)]
    wait_ms: u64,
}

async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventQuery>,
) -> ApiResult<Response> {
    let wf = lookup(&state, &id)?;
    let wait = Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
    let batch = if wait.is_zero() {
        wf.events().since(q.from)
    } else {
        let log = wf.events().clone();
        tokio::task::spawn_blocking(move || log.wait_since(q.from, wait))
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    };
    Ok(Json(batch).into_response())
}

#[derive(Debug, Deserialize)]
struct FeedbackRequest {
    #[serde(default)]
    task_id: Option<String>,
    kind: FeedbackKind,
    content: String,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<FeedbackRequest>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let wf = lookup(&state, &id)?;
    let envelope = FeedbackEnvelope {
        workflow_id: id,
        task_id: req.task_id,
        kind: req.kind,
        content: req.content,
    };
    match wf.inject_feedback(envelope) {
        Ok(task_id) => Ok((StatusCode::ACCEPTED, Json(json!({"task_id": task_id})))),
        Err(e) => {
            let status = match e {
                FeedbackError::NoSuchWorkflow(_) | FeedbackError::UnknownTask(_) => StatusCode::NOT_FOUND,
                FeedbackError::NoOutstandingRequest | FeedbackError::TaskAlreadyDone(_) | FeedbackError::NotRunning => {
                    StatusCode::CONFLICT
                }
            };
            Err(ApiError(status, e.to_string()))
        }
    }
}

fn transition(result: std::result::Result<(), CoordinatorError>, wf: &Workflow) -> ApiResult<Json<WorkflowDescriptor>> {
    match result {
        Ok(()) => Ok(Json(wf.descriptor())),
        Err(e @ CoordinatorError::InvalidTransition { .. }) => Err(ApiError(StatusCode::CONFLICT, e.to_string())),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn pause(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<WorkflowDescriptor>> {
    let wf = lookup(&state, &id)?;
    transition(wf.pause(), &wf)
}

async fn resume(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<WorkflowDescriptor>> {
    let wf = lookup(&state, &id)?;
    transition(wf.resume(), &wf)
}
