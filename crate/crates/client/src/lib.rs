//! Thin async client for the experiment service.

use std::path::{Path, PathBuf};
use std::time::Duration;

use reqwest::{Response, StatusCode};
use rfqd_api::{
    ArchiveFormat, ErrorBody, FileList, Health, JobInfo, RunRequest, SuiteInfo, SuiteRequest, SweepRequest,
    ValidateRequest, ValidateResponse,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use rfqd_api as api;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error(transparent)]
    Http(#[from] reqwest::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("server returned unusable file path {0:?}")]
    BadPath(String),
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn check(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let body = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&body).map(|b| b.error).unwrap_or(body);
        Err(ClientError::Api { status, message })
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Ok(Self::check(self.http.get(self.url(path)).send().await?).await?.json().await?)
    }

    async fn post_json<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Ok(Self::check(self.http.post(self.url(path)).json(body).send().await?).await?.json().await?)
    }

    async fn get_text(&self, path: &str, query: &[(&str, &str)]) -> Result<String> {
        let resp = self.http.get(self.url(path)).query(query).send().await?;
        Ok(Self::check(resp).await?.text().await?)
    }

    pub async fn health(&self) -> Result<Health> {
        self.get_json("/health").await
    }

    pub async fn suites(&self) -> Result<Vec<SuiteInfo>> {
        self.get_json("/suites").await
    }

    pub async fn validate(&self, config_toml: &str) -> Result<ValidateResponse> {
        self.post_json("/validate", &ValidateRequest { config_toml: config_toml.into() }).await
    }

    pub async fn submit_run(&self, req: &RunRequest) -> Result<JobInfo> {
        self.post_json("/runs", req).await
    }

    pub async fn submit_sweep(&self, req: &SweepRequest) -> Result<JobInfo> {
        self.post_json("/sweeps", req).await
    }

    pub async fn submit_suite(&self, name: &str, req: &SuiteRequest) -> Result<JobInfo> {
        self.post_json(&format!("/suites/{name}"), req).await
    }

    pub async fn job(&self, id: &str) -> Result<JobInfo> {
        self.get_json(&format!("/jobs/{id}")).await
    }

    pub async fn jobs(&self) -> Result<Vec<JobInfo>> {
        self.get_json("/jobs").await
    }

    /// Polls until the job finishes, calling `on_update` whenever the
    /// number of completed runs changes.
    pub async fn wait_for_job(
        &self,
        id: &str,
        poll: Duration,
        mut on_update: impl FnMut(&JobInfo),
    ) -> Result<JobInfo> {
        let mut seen = None;
        loop {
            let info = self.job(id).await?;
            if seen != Some((info.status, info.completed_runs)) {
                seen = Some((info.status, info.completed_runs));
                on_update(&info);
            }
            if info.status.is_finished() {
                return Ok(info);
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn files(&self, id: &str) -> Result<Vec<String>> {
        Ok(self.get_json::<FileList>(&format!("/jobs/{id}/files")).await?.files)
    }

    pub async fn download_file(&self, id: &str, path: &str) -> Result<Vec<u8>> {
        let resp = self.http.get(self.url(&format!("/jobs/{id}/files/{path}"))).send().await?;
        Ok(Self::check(resp).await?.bytes().await?.to_vec())
    }

    /// Copies every file of the job below `out_dir`, keeping relative paths.
    pub async fn download_all(&self, id: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for rel in self.files(id).await? {
            if rel.split('/').any(|p| p.is_empty() || p == "." || p == "..") {
                return Err(ClientError::BadPath(rel));
            }
            let dest = rel.split('/').fold(out_dir.to_path_buf(), |p, part| p.join(part));
            if let Some(parent) = dest.parent() {
                tokio::fs::create_dir_all(parent).await?;
            }
            tokio::fs::write(&dest, self.download_file(id, &rel).await?).await?;
            written.push(dest);
        }
        Ok(written)
    }

    /// Final archive of one run; `run` is `label/seed` and may be omitted
    /// for single-run jobs.
    pub async fn archive(&self, id: &str, run: Option<&str>, format: ArchiveFormat) -> Result<String> {
        let mut query = vec![("format", format.name())];
        if let Some(r) = run {
            query.push(("run", r));
        }
        self.get_text(&format!("/jobs/{id}/archive"), &query).await
    }

    pub async fn metrics(&self, id: &str, run: Option<&str>) -> Result<String> {
        let query: Vec<(&str, &str)> = run.map(|r| ("run", r)).into_iter().collect();
        self.get_text(&format!("/jobs/{id}/metrics"), &query).await
    }
}
