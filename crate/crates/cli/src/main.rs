use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use taskweave_cli::server::{self, AppState, ServerOptions};
use taskweave_cli::{build_backend, inspect, load_config, render_outcome, write_events, BackendChoice};
use taskweave_core::backend::HashEmbedder;
use taskweave_core::coordinator::{Engine, Phase, RunOptions, Snapshot, WorkflowState};
use taskweave_core::tools::CorpusIndex;

#[derive(Parser)]
#[command(name = "taskweave", version, about = "Plan, execute and verify multi-agent workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workflow to completion and print its result and verdict.
    Run {
        /// Workflow config (.toml or .json).
        config: PathBuf,
        #[arg(long, conflicts_with = "instruction_file", required_unless_present = "instruction_file")]
        instruction: Option<String>,
        #[arg(long)]
        instruction_file: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Continue a workflow from a snapshot file.
    Resume {
        snapshot: PathBuf,
        /// Config to resume under; defaults to the one recorded in the snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Host the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory holding workflow configs.
        #[arg(long, default_value = "workflows")]
        workflows: PathBuf,
        /// Per-workflow workspaces are created under this directory.
        #[arg(long)]
        workspace_root: Option<PathBuf>,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        /// Built console assets to serve alongside the API.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Summarize a snapshot or an event log.
    Inspect { path: PathBuf },
    /// Build a semantic search index from a directory of documents.
    Ingest {
        corpus_dir: PathBuf,
        #[arg(long, default_value = "index.jsonl")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// `scripted:<fixture>` or `http`; defaults to the config's backend.
    #[arg(long)]
    backend: Option<BackendChoice>,
    /// Write a snapshot here after every completed task.
    #[arg(long)]
    snapshot_dir: Option<PathBuf>,
    /// Directory for file_io instead of the configured one.
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Write the event log as JSONL.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    workflow_id: Option<String>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            workflow_id: self.workflow_id.clone(),
            snapshot_dir: self.snapshot_dir.clone(),
            halt_after_completed: None,
        }
    }

    fn choice(&self) -> BackendChoice {
        self.backend.clone().unwrap_or(BackendChoice::Config)
    }
}

fn finish(state: &WorkflowState, common: &Common) -> Result<ExitCode> {
    if let Some(path) = &common.events {
        write_events(path, &state.event_log)?;
    }
    print!("{}", render_outcome(state));
    Ok(if state.phase == Phase::Done {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run(config: &Path, instruction: Option<String>, instruction_file: Option<PathBuf>, common: &Common) -> Result<ExitCode> {
    let instruction = match (instruction, instruction_file) {
        (Some(text), _) => text,
        (None, Some(path)) => std::fs::read_to_string(&path)
            .with_context(|| format!("reading instruction file {}", path.display()))?
            .trim()
            .to_string(),
        (None, None) => bail!("pass --instruction or --instruction-file"),
    };
    let config = load_config(config, common.workspace.as_deref())?;
    let backend = build_backend(&config, &common.choice(), 0)?;
    let engine = Engine::new(config, backend)?;
    let state = engine.run(&instruction, &common.options());
    finish(&state, common)
}

fn resume(snapshot: &Path, config: Option<PathBuf>, common: &Common) -> Result<ExitCode> {
    let snap = Snapshot::load(snapshot)?;
    let config_path = config
        .or_else(|| snap.config_path.clone())
        .context("snapshot records no config file; pass --config")?;
    let config = load_config(&config_path, common.workspace.as_deref())?;
    let backend = build_backend(&config, &common.choice(), snap.model_calls())?;
    let engine = Engine::new(config, backend)?;
    let mut opts = common.options();
    opts.workflow_id = None;
    let state = engine.resume(snap, &opts)?;
    finish(&state, common)
}

async fn serve(
    addr: String,
    workflows: &Path,
    options: ServerOptions,
) -> Result<()> {
    let configs = server::discover_configs(workflows)?;
    if configs.is_empty() {
        log::warn!("no workflow configs found in {}", workflows.display());
    }
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!(
        "serving {} config(s) on http://{}",
        configs.len(),
        listener.local_addr()?
    );
    server::serve(listener, Arc::new(AppState::new(configs, options))).await?;
    Ok(())
}

fn ingest(dir: &Path, out: &Path) -> Result<()> {
    let index = CorpusIndex::ingest_dir(dir, &HashEmbedder::default()).map_err(anyhow::Error::msg)?;
    index.save_jsonl(out).with_context(|| format!("writing {}", out.display()))?;
    println!("indexed {} chunks into {}", index.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            instruction,
            instruction_file,
            common,
        } => run(&config, instruction, instruction_file, &common),
        Command::Resume { snapshot, config, common } => resume(&snapshot, config, &common),
        Command::Serve {
            port,
            host,
            workflows,
            workspace_root,
            snapshot_dir,
            assets,
        } => tokio::runtime::Runtime::new()
            .context("starting runtime")
            .and_then(|rt| {
                rt.block_on(serve(
                    format!("{host}:{port}"),
                    &workflows,
                    ServerOptions {
                        workspace_root,
                        snapshot_dir,
                        assets,
                    },
                ))
            })
            .map(|()| ExitCode::SUCCESS),
        Command::Inspect { path } => inspect(&path).map(|text| {
            print!("{text}");
            ExitCode::SUCCESS
        }),
        Command::Ingest { corpus_dir, out } => ingest(&corpus_dir, &out).map(|()| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
