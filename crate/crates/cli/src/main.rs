use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rfqd_client::api::{ArchiveFormat, JobInfo, JobStatus, RunRequest, SuiteRequest, SweepRequest};
use rfqd_client::Client;

/// Reset-free quality-diversity experiments.
///
/// Every command talks to the experiment service. Without --server an
/// embedded one is started for the duration of the command, keeping its jobs
/// under --data-dir.
#[derive(Parser)]
#[command(name = "rfqd", version)]
struct Cli {
    /// URL of a running service, e.g. http://127.0.0.1:8080.
    #[arg(long, global = true, env = "RFQD_SERVER")]
    server: Option<String>,
    /// Job store of the embedded service.
    #[arg(long, global = true, env = "RFQD_DATA_DIR", default_value = ".rfqd")]
    data_dir: PathBuf,
    /// Print no progress.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One seeded run with every artifact.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Divide the real-evaluation budget by this factor.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One configuration over a seed range.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (half-open) or `a..=b`.
        #[arg(long)]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// A predefined experiment suite.
    Suite {
        name: SuiteName,
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Final archive of a finished run.
    ExportArchive {
        #[arg(long)]
        job: String,
        /// `label/seed`; optional when the job has one run.
        #[arg(long)]
        run: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Write here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Per-evaluation metrics of a finished run.
    ExportMetrics {
        #[arg(long)]
        job: String,
        #[arg(long)]
        run: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// List jobs, or show one.
    Jobs { id: Option<String> },
    /// Check a configuration file and print it with defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteName {
    Baselines,
    PolicyGrid,
    Complexity,
    Emitters,
}

impl SuiteName {
    fn as_str(self) -> &'static str {
        match self {
            SuiteName::Baselines => "baselines",
            SuiteName::PolicyGrid => "policy-grid",
            SuiteName::Complexity => "complexity",
            SuiteName::Emitters => "emitters",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[tokio::main]
async fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Command::Serve { addr } = cli.command {
        return serve(addr, &cli.data_dir).await;
    }
    let client = match &cli.server {
        Some(url) => Client::new(url.clone()),
        None => embedded(&cli.data_dir).await?,
    };
    match cli.command {
        Command::Run { config, seed, scale, out } => {
            let req = RunRequest { config_toml: read(&config)?, seed, scale: Some(scale) };
            let job = client.submit_run(&req).await?;
            finish(&client, job, &out, cli.quiet).await
        }
        Command::Sweep { config, seeds, scale, out } => {
            let req = SweepRequest { config_toml: read(&config)?, seeds, scale: Some(scale) };
            let job = client.submit_sweep(&req).await?;
            finish(&client, job, &out, cli.quiet).await
        }
        Command::Suite { name, seeds, scale, out } => {
            let req = SuiteRequest { seeds: Some(seeds), scale: Some(scale) };
            let job = client.submit_suite(name.as_str(), &req).await?;
            finish(&client, job, &out, cli.quiet).await
        }
        Command::ExportArchive { job, run, format, output } => {
            let format = match format {
                Format::Text => ArchiveFormat::Text,
                Format::Csv => ArchiveFormat::Csv,
            };
            emit(&client.archive(&job, run.as_deref(), format).await?, output.as_deref())
        }
        Command::ExportMetrics { job, run, output } => emit(&client.metrics(&job, run.as_deref()).await?, output.as_deref()),
        Command::Jobs { id: Some(id) } => {
            let job = client.job(&id).await?;
            println!("{}", describe(&job));
            for run in &job.runs {
                println!("  {run}");
            }
            Ok(())
        }
        Command::Jobs { id: None } => {
            for job in client.jobs().await? {
                println!("{}", describe(&job));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let resp = client.validate(&read(&config)?).await?;
            match (resp.valid, resp.config_toml, resp.error) {
                (true, Some(toml), _) => {
                    print!("{toml}");
                    Ok(())
                }
                (_, _, err) => bail!("{}: {}", config.display(), err.unwrap_or_else(|| "invalid".into())),
            }
        }
        Command::Serve { .. } => unreachable!(),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(body: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, body).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn describe(job: &JobInfo) -> String {
    let status = match job.status {
        JobStatus::Queued => "queued",
        JobStatus::Running => "running",
        JobStatus::Succeeded => "succeeded",
        JobStatus::Failed => "failed",
    };
    let mut line = format!("{}  {:<9} {:<12} {}/{} runs", job.id, status, job.plan, job.completed_runs, job.total_runs);
    if let Some(e) = &job.error {
        line.push_str(&format!("  error: {e}"));
    }
    line
}

/// Waits for the job and copies its files below `out`.
async fn finish(client: &Client, job: JobInfo, out: &Path, quiet: bool) -> Result<()> {
    if !quiet {
        eprintln!("job {} submitted: {} runs of {}", job.id, job.total_runs, job.plan);
    }
    let done = client
        .wait_for_job(&job.id, Duration::from_millis(200), |info| {
            if !quiet && info.completed_runs > 0 {
                eprintln!("  {}/{} runs", info.completed_runs, info.total_runs);
            }
        })
        .await?;
    if done.status == JobStatus::Failed {
        bail!("job {} failed: {}", done.id, done.error.unwrap_or_default());
    }
    let files = client.download_all(&done.id, out).await?;
    if !quiet {
        eprintln!("job {} wrote {} files to {}", done.id, files.len(), out.join(&done.plan).display());
    }
    Ok(())
}

async fn embedded(data_dir: &Path) -> Result<Client> {
    let state = rfqd_server::AppState::open(data_dir).with_context(|| format!("opening {}", data_dir.display()))?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(rfqd_server::serve(listener, state));
    Ok(Client::new(format!("http://{addr}")))
}

async fn serve(addr: SocketAddr, data_dir: &Path) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let state = rfqd_server::AppState::open(data_dir).with_context(|| format!("opening {}", data_dir.display()))?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum_shutdown(listener, state).await
}

async fn axum_shutdown(listener: tokio::net::TcpListener, state: rfqd_server::AppState) -> Result<()> {
    tokio::select! {
        r = rfqd_server::serve(listener, state) => r?,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}
