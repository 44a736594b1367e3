//! Job store: one directory per job holding `job.json` and the plan output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use rfqd_api::{JobInfo, JobKind, JobStatus, RunRequest, SuiteRequest, SweepRequest};
use rfqd_core::harness::{self, Plan, SeedRange, Suite};
use rfqd_core::runner::RunConfig;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::error::{ApiError, ApiResult};

/// What was submitted; kept so a job can be rebuilt after a restart.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JobRequest {
    Run(RunRequest),
    Sweep(SweepRequest),
    Suite { name: String, request: SuiteRequest },
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Run(_) => JobKind::Run,
            JobRequest::Sweep(_) => JobKind::Sweep,
            JobRequest::Suite { .. } => JobKind::Suite,
        }
    }

    pub fn plan(&self) -> ApiResult<Plan> {
        let plan = match self {
            JobRequest::Run(r) => {
                let mut cfg = RunConfig::from_toml(&r.config_toml)?;
                if let Some(seed) = r.seed {
                    cfg.seed = seed;
                }
                let seed = cfg.seed;
                Plan::single(cfg, seed, r.scale.unwrap_or(1))
            }
            JobRequest::Sweep(r) => {
                let cfg = RunConfig::from_toml(&r.config_toml)?;
                Plan::sweep(cfg, r.seeds.parse()?, r.scale.unwrap_or(1))
            }
            JobRequest::Suite { name, request } => {
                let suite: Suite = name.parse().map_err(|e: rfqd_core::Error| ApiError::not_found(e.to_string()))?;
                let seeds = match &request.seeds {
                    Some(s) => s.parse()?,
                    None => SeedRange::default(),
                };
                Plan::suite(suite, seeds, request.scale.unwrap_or(1))
            }
        };
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct JobFile {
    info: JobInfo,
    request: JobRequest,
}

pub struct JobStore {
    root: PathBuf,
    jobs: Mutex<BTreeMap<String, JobFile>>,
    queue: mpsc::UnboundedSender<String>,
}

impl JobStore {
    /// Loads the jobs under `data_dir/jobs` and starts the worker. Jobs that
    /// were running when the previous process stopped are marked failed;
    /// queued ones are queued again. Must be called inside a tokio runtime.
    pub fn open(data_dir: &Path) -> std::io::Result<Arc<Self>> {
        let root = data_dir.join("jobs");
        fs::create_dir_all(&root)?;
        let mut jobs = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path().join("job.json");
            let Ok(text) = fs::read_to_string(&path) else { continue };
            match serde_json::from_str::<JobFile>(&text) {
                Ok(job) => {
                    jobs.insert(job.info.id.clone(), job);
                }
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable job"),
            }
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let store = Arc::new(Self { root, jobs: Mutex::new(jobs), queue: tx });
        let mut requeue = Vec::new();
        {
            let mut jobs = store.jobs.lock().unwrap();
            for job in jobs.values_mut() {
                match job.info.status {
                    JobStatus::Running => {
                        job.info.status = JobStatus::Failed;
                        job.info.error = Some("interrupted by server shutdown".into());
                        store.persist(job)?;
                    }
                    JobStatus::Queued => requeue.push(job.info.id.clone()),
                    _ => {}
                }
            }
        }
        for id in requeue {
            let _ = store.queue.send(id);
        }
        tokio::spawn(worker(store.clone(), rx));
        Ok(store)
    }

    pub fn submit(&self, request: JobRequest) -> ApiResult<JobInfo> {
        let plan = request.plan()?;
        let mut jobs = self.jobs.lock().unwrap();
        let next = jobs.keys().filter_map(|k| k.parse::<u64>().ok()).max().map_or(1, |n| n + 1);
        let id = format!("{next:06}");
        let runs = plan
            .arms
            .iter()
            .flat_map(|arm| plan.seeds.iter().map(move |s| format!("{}/{s}", arm.label)))
            .collect();
        let info = JobInfo {
            id: id.clone(),
            kind: request.kind(),
            plan: plan.name.clone(),
            status: JobStatus::Queued,
            total_runs: plan.total_runs(),
            completed_runs: 0,
            error: None,
            runs,
        };
        let job = JobFile { info: info.clone(), request };
        fs::create_dir_all(self.root.join(&id))?;
        self.persist(&job)?;
        jobs.insert(id.clone(), job);
        drop(jobs);
        self.queue.send(id).map_err(|_| ApiError::internal("job worker stopped"))?;
        Ok(info)
    }

    pub fn get(&self, id: &str) -> ApiResult<JobInfo> {
        self.jobs
            .lock()
            .unwrap()
            .get(id)
            .map(|j| j.info.clone())
            .ok_or_else(|| ApiError::not_found(format!("no job {id:?}")))
    }

    pub fn list(&self) -> Vec<JobInfo> {
        self.jobs.lock().unwrap().values().map(|j| j.info.clone()).collect()
    }

    /// Root of a job's output; file paths are relative to it.
    pub fn output_dir(&self, id: &str) -> PathBuf {
        self.root.join(id).join("out")
    }

    /// Every file of the job, `/`-separated and sorted.
    pub fn files(&self, id: &str) -> ApiResult<Vec<String>> {
        self.get(id)?;
        let root = self.output_dir(id);
        if !root.exists() {
            return Ok(Vec::new());
        }
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(&root).sort_by_file_name() {
            let entry = entry.map_err(|e| ApiError::internal(e.to_string()))?;
            if entry.file_type().is_file() {
                let rel = entry.path().strip_prefix(&root).expect("walk stays below root");
                let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                files.push(parts.join("/"));
            }
        }
        Ok(files)
    }

    /// Resolves a relative file path, refusing anything that would leave the
    /// job's output directory.
    pub fn file_path(&self, id: &str, rel: &str) -> ApiResult<PathBuf> {
        self.get(id)?;
        let rel = Path::new(rel);
        if rel.as_os_str().is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(ApiError::bad_request(format!("invalid file path {:?}", rel.display().to_string())));
        }
        Ok(self.output_dir(id).join(rel))
    }

    /// Directory of one run, `label/seed`; a job with a single run needs no
    /// name.
    pub fn run_dir(&self, id: &str, run: Option<&str>) -> ApiResult<PathBuf> {
        let info = self.get(id)?;
        let run = match run {
            Some(r) if info.runs.iter().any(|x| x == r) => r.to_string(),
            Some(r) => return Err(ApiError::not_found(format!("job {id} has no run {r:?}"))),
            None if info.runs.len() == 1 => info.runs[0].clone(),
            None => {
                return Err(ApiError::bad_request(format!(
                    "job {id} has {} runs; pick one with ?run=<label>/<seed>",
                    info.runs.len()
                )))
            }
        };
        Ok(self.output_dir(id).join(&info.plan).join(run))
    }

    fn persist(&self, job: &JobFile) -> std::io::Result<()> {
        let dir = self.root.join(&job.info.id);
        let tmp = dir.join("job.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(job)?)?;
        fs::rename(tmp, dir.join("job.json"))
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut JobInfo)) {
        let mut jobs = self.jobs.lock().unwrap();
        if let Some(job) = jobs.get_mut(id) {
            f(&mut job.info);
            if let Err(e) = self.persist(job) {
                tracing::error!(job = id, error = %e, "could not persist job");
            }
        }
    }

    fn request(&self, id: &str) -> Option<JobRequest> {
        self.jobs.lock().unwrap().get(id).map(|j| j.request.clone())
    }
}

/// Runs queued jobs one at a time; each run already uses every core.
async fn worker(store: Arc<JobStore>, mut rx: mpsc::UnboundedReceiver<String>) {
    while let Some(id) = rx.recv().await {
        let Some(request) = store.request(&id) else { continue };
        store.update(&id, |info| info.status = JobStatus::Running);
        tracing::info!(job = %id, "job started");
        let s = store.clone();
        let job_id = id.clone();
        let result = tokio::task::spawn_blocking(move || run_job(&s, &job_id, &request)).await;
        let error = match result {
            Ok(Ok(())) => None,
            Ok(Err(e)) => Some(e),
            Err(e) => Some(format!("job panicked: {e}")),
        };
        match &error {
            None => tracing::info!(job = %id, "job succeeded"),
            Some(e) => tracing::warn!(job = %id, error = %e, "job failed"),
        }
        store.update(&id, |info| {
            info.status = if error.is_some() { JobStatus::Failed } else { JobStatus::Succeeded };
            info.error = error;
        });
    }
}

fn run_job(store: &JobStore, id: &str, request: &JobRequest) -> Result<(), String> {
    let plan = request.plan().map_err(|e| e.message)?;
    let out = store.output_dir(id).join(&plan.name);
    if out.exists() {
        fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    }
    let progress = |_: &harness::RunRecord, done: usize, _: usize| {
        store.update(id, |info| info.completed_runs = info.completed_runs.max(done));
    };
    harness::execute(&plan, Some(&out), Some(&progress)).map_err(|e| e.to_string())?;
    Ok(())
}
