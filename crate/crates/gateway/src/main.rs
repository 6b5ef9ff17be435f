use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dialhub_core::analytics::{
    collection_cost, filter_and_rank, ngram_frequencies, progress_series, system_summary, Bucket, DialogFilter,
    NullScorer, RankBy,
};
use dialhub_core::crowd::{
    build_task, project_statistics, render_html, suggest_payment, CrowdProject, QualityThresholds, WorkerSubmission,
};
use dialhub_core::store::EventPayload;
use dialhub_core::{DialogStore, Money, Side, StoreOptions, DEFAULT_MIN_TURNS};
use dialhub_gateway::config::{Config, SystemEntry};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "dialhub", version, about = "Gateway that connects users with remote dialog systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ConfigArg),
    /// Add a dialog system to the store used by `serve`.
    RegisterSystem(RegisterArgs),
    /// Write the raw event log.
    ExportLog {
        #[command(flatten)]
        config: ConfigArg,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dashboard numbers for an exported log, without a running service.
    Analyze(AnalyzeArgs),
    /// Annotation task tooling.
    #[command(subcommand)]
    Crowd(CrowdCommand),
}

#[derive(Args)]
struct ConfigArg {
    /// Config file (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config> {
        match &self.config {
            Some(path) => Ok(Config::load(path)?),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    id: String,
    #[arg(long)]
    name: String,
    #[arg(long)]
    endpoint: String,
    /// Repeat for each domain the system serves.
    #[arg(long = "domain", required = true)]
    domains: Vec<String>,
    #[arg(long)]
    auth_token: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    logfile: PathBuf,
    /// Limit per-system sections to this system.
    #[arg(long)]
    system: Option<String>,
    /// Dialog filter, e.g. `utterances>3,likes>=1`.
    #[arg(long)]
    filter: Option<String>,
    /// Ranking, e.g. `likes:desc`.
    #[arg(long)]
    rank: Option<String>,
    /// Total spend, for cost per usable dialog.
    #[arg(long)]
    budget: Option<Money>,
    #[arg(long, default_value_t = DEFAULT_MIN_TURNS)]
    min_turns: usize,
    #[arg(long, default_value = "DAY")]
    bucket: Bucket,
    #[arg(long, default_value_t = 20)]
    top: usize,
}

#[derive(Subcommand)]
enum CrowdCommand {
    /// Generate the task bundle and HTML page for a project.
    Build {
        project: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Hourly wage used to suggest a per-task payment.
        #[arg(long)]
        hourly_wage: Option<Money>,
    },
    /// Worker quality and agreement for submissions to a built task.
    Stats {
        project: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of worker submissions.
        #[arg(long)]
        submissions: PathBuf,
        #[arg(long)]
        include_flagged: bool,
        #[arg(long)]
        json: bool,
    },
}

fn read_project(path: &Path) -> Result<CrowdProject> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let project = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    Ok(project)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let store = DialogStore::from_log_file(&args.logfile).with_context(|| format!("loading {}", args.logfile.display()))?;
    let snapshot = store.snapshot();
    let systems: Vec<_> = match &args.system {
        Some(id) => vec![dialhub_core::SystemId::new(id)],
        None => snapshot.systems.iter().cloned().collect(),
    };
    let mut per_system = Vec::new();
    for id in &systems {
        let top = |side| -> Result<_> {
            let mut grams = ngram_frequencies(id, side, 1, 1, &snapshot)?;
            grams.truncate(args.top);
            Ok(grams)
        };
        per_system.push(serde_json::json!({
            "summary": system_summary(id, &snapshot, &NullScorer)?,
            "top_user_words": top(Some(Side::User))?,
            "top_system_words": top(Some(Side::System))?,
            "progress": progress_series(id, args.bucket, &snapshot)?,
        }));
    }
    let filter: DialogFilter = args.filter.as_deref().unwrap_or("").parse()?;
    let rank: Option<RankBy> = args.rank.as_deref().map(str::parse).transpose()?;
    let dialogs: Vec<_> = filter_and_rank(&filter, rank, &snapshot, &NullScorer)?
        .iter()
        .map(|s| {
            serde_json::json!({
                "session_id": s.session_id,
                "created_at": s.created_at,
                "matched_system": s.matched_system,
                "turns": s.turns.len(),
                "likes": s.feedback_count(dialhub_core::FeedbackKind::Like),
            })
        })
        .collect();
    let cost = args.budget.map(|b| collection_cost(b, &snapshot.sessions, args.min_turns)).transpose()?;
    print_json(&serde_json::json!({
        "events": store.event_count(),
        "dialogs": snapshot.sessions.len(),
        "systems": per_system,
        "matching_dialogs": dialogs,
        "cost": cost,
    }))
}

fn crowd(cmd: &CrowdCommand) -> Result<()> {
    match cmd {
        CrowdCommand::Build { project, seed, out_dir, hourly_wage } => {
            let p = read_project(project)?;
            let bundle = build_task(&p, *seed)?;
            fs::create_dir_all(out_dir)?;
            fs::write(out_dir.join("bundle.json"), serde_json::to_vec_pretty(&bundle)?)?;
            fs::write(out_dir.join("task.html"), render_html(&bundle))?;
            println!("{} items presented, written to {}", bundle.sequence.len(), out_dir.display());
            if let Some(wage) = hourly_wage {
                let secs = (bundle.estimated_seconds_per_item * bundle.sequence.len() as f64).ceil() as u32;
                println!("suggested payment per task: {} ({secs} s at {wage}/hr)", suggest_payment(secs, *wage)?);
            }
        }
        CrowdCommand::Stats { project, seed, submissions, include_flagged, json } => {
            let bundle = build_task(&read_project(project)?, *seed)?;
            let text = fs::read_to_string(submissions).with_context(|| format!("reading {}", submissions.display()))?;
            let subs: Vec<WorkerSubmission> = serde_json::from_str(&text)?;
            let stats = project_statistics(&subs, &bundle, &QualityThresholds::default(), *include_flagged)?;
            if *json {
                print_json(&stats)?;
            } else {
                print!("{}", stats.render_text());
            }
        }
    }
    Ok(())
}

fn register(args: &RegisterArgs) -> Result<()> {
    let config = args.config.load()?;
    let entry = SystemEntry {
        id: args.id.clone(),
        name: args.name.clone(),
        endpoint: args.endpoint.clone(),
        domains: args.domains.clone(),
        auth_token: args.auth_token.clone(),
    };
    let descriptor = entry.to_descriptor().map_err(anyhow::Error::msg)?;
    let store = DialogStore::open(&config.server.data_dir, StoreOptions::default())?;
    if store.registered_systems().iter().any(|d| d.system_id == descriptor.system_id) {
        bail!("system {} is already registered", descriptor.system_id);
    }
    store.append(EventPayload::SystemRegistered(Box::new(descriptor)))?;
    println!("registered {}", args.id);
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested; draining in-flight requests");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve(c) => {
            let config = c.load()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(dialhub_gateway::serve(config, shutdown_signal()))?;
        }
        Command::RegisterSystem(args) => register(&args)?,
        Command::ExportLog { config, out } => {
            let config = config.load()?;
            let store = DialogStore::open(&config.server.data_dir, StoreOptions::default())?;
            match out {
                Some(path) => store.export(&mut fs::File::create(&path)?)?,
                None => store.export(&mut std::io::stdout().lock())?,
            }
        }
        Command::Analyze(args) => analyze(&args)?,
        Command::Crowd(cmd) => crowd(&cmd)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
