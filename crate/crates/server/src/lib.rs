//! HTTP/JSON front end for RF-QD experiments. Submissions become jobs that
//! run in the background; their files stay on disk and can be listed,
//! downloaded or exported once the runs finish.

mod error;
mod jobs;

use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use rfqd_api::{
    ArchiveFormat, FileList, Health, JobInfo, RunRequest, SuiteInfo, SuiteRequest, SweepRequest, ValidateRequest,
    ValidateResponse,
};
use rfqd_core::harness::Suite;
use rfqd_core::qd::Archive;
use rfqd_core::runner::RunConfig;
use serde::Deserialize;
use tokio::net::TcpListener;

pub use error::{ApiError, ApiResult};
pub use jobs::{JobRequest, JobStore};

#[derive(Clone)]
pub struct AppState {
    pub jobs: Arc<JobStore>,
}

impl AppState {
    /// Opens (or creates) the data directory. Must be called inside a tokio
    /// runtime because it starts the job worker.
    pub fn open(data_dir: &Path) -> std::io::Result<Self> {
        Ok(Self { jobs: JobStore::open(data_dir)? })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/suites", get(suites))
        .route("/suites/{name}", post(submit_suite))
        .route("/validate", post(validate))
        .route("/runs", post(submit_run))
        .route("/sweeps", post(submit_sweep))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(job))
        .route("/jobs/{id}/files", get(files))
        .route("/jobs/{id}/files/{*path}", get(file))
        .route("/jobs/{id}/archive", get(archive))
        .route("/jobs/{id}/metrics", get(metrics))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn suites() -> Json<Vec<SuiteInfo>> {
    Json(
        Suite::ALL
            .iter()
            .map(|s| SuiteInfo { name: s.name().into(), arms: s.arms().into_iter().map(|a| a.label).collect() })
            .collect(),
    )
}

async fn validate(Json(req): Json<ValidateRequest>) -> Json<ValidateResponse> {
    Json(match RunConfig::from_toml(&req.config_toml) {
        Ok(cfg) => ValidateResponse { valid: true, error: None, config_toml: Some(cfg.to_toml()) },
        Err(e) => ValidateResponse { valid: false, error: Some(e.to_string()), config_toml: None },
    })
}

async fn submit(state: &AppState, request: JobRequest) -> ApiResult<(StatusCode, Json<JobInfo>)> {
    let jobs = state.jobs.clone();
    let info = tokio::task::spawn_blocking(move || jobs.submit(request))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::ACCEPTED, Json(info)))
}

async fn submit_run(State(state): State<AppState>, Json(req): Json<RunRequest>) -> ApiResult<impl IntoResponse> {
    submit(&state, JobRequest::Run(req)).await
}

async fn submit_sweep(State(state): State<AppState>, Json(req): Json<SweepRequest>) -> ApiResult<impl IntoResponse> {
    submit(&state, JobRequest::Sweep(req)).await
}

async fn submit_suite(
    State(state): State<AppState>,
    UrlPath(name): UrlPath<String>,
    Json(request): Json<SuiteRequest>,
) -> ApiResult<impl IntoResponse> {
    submit(&state, JobRequest::Suite { name, request }).await
}

async fn list_jobs(State(state): State<AppState>) -> Json<Vec<JobInfo>> {
    Json(state.jobs.list())
}

async fn job(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<JobInfo>> {
    Ok(Json(state.jobs.get(&id)?))
}

async fn files(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<FileList>> {
    Ok(Json(FileList { files: state.jobs.files(&id)? }))
}

fn text(body: String) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body)
}

async fn file(
    State(state): State<AppState>,
    UrlPath((id, path)): UrlPath<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let path = state.jobs.file_path(&id, &path)?;
    let body = tokio::fs::read(&path).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::not_found(format!("job {id} has no file {:?}", path.display().to_string())),
        _ => ApiError::from(e),
    })?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], body))
}

#[derive(Debug, Default, Deserialize)]
struct RunQuery {
    run: Option<String>,
    #[serde(default)]
    format: ArchiveFormat,
}

async fn read_run_file(state: &AppState, id: &str, run: Option<&str>, name: &str) -> ApiResult<String> {
    let path = state.jobs.run_dir(id, run)?.join(name);
    tokio::fs::read_to_string(&path).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::conflict(format!("{name} of job {id} is not written yet")),
        _ => ApiError::from(e),
    })
}

async fn archive(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RunQuery>,
) -> ApiResult<impl IntoResponse> {
    let body = read_run_file(&state, &id, q.run.as_deref(), "archive.txt").await?;
    Ok(text(match q.format {
        ArchiveFormat::Text => body,
        ArchiveFormat::Csv => Archive::from_text(&body).map_err(|e| ApiError::internal(e.to_string()))?.to_csv(),
    }))
}

async fn metrics(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RunQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(text(read_run_file(&state, &id, q.run.as_deref(), "metrics.csv").await?))
}
