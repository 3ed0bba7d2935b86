use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use taskweave_core::backend::{ChatBackend, HttpBackend, ScriptedBackend};
use taskweave_core::coordinator::{BackendConfig, Phase, Snapshot, WorkflowConfig, WorkflowState};
use taskweave_core::event::{EventKind, WorkflowEvent};

/// Where model responses come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    /// Whatever the config's `[backend]` section names.
    Config,
    Scripted(PathBuf),
    Http,
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "config" => Ok(Self::Config),
            _ => match s.strip_prefix("scripted:") {
                Some(path) if !path.is_empty() => Ok(Self::Scripted(PathBuf::from(path))),
                _ => Err(format!("expected 'scripted:<fixture>' or 'http', got '{s}'")),
            },
        }
    }
}

/// Loads a config file, optionally pointing `file_io` at another directory.
pub fn load_config(path: &Path, workspace: Option<&Path>) -> Result<WorkflowConfig> {
    if !path.exists() {
        bail!("config file {} does not exist", path.display());
    }
    let mut config = WorkflowConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(ws) = workspace {
        config.tools.workspace = Some(absolute(ws)?);
    }
    Ok(config)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

/// Builds the chat backend. A scripted backend skips its first `skip`
/// entries, which a resumed run has already consumed.
pub fn build_backend(config: &WorkflowConfig, choice: &BackendChoice, skip: usize) -> Result<Arc<dyn ChatBackend>> {
    let fixture = match (choice, &config.backend) {
        (BackendChoice::Scripted(path), _) => path.clone(),
        (BackendChoice::Config, Some(BackendConfig::Scripted { fixture })) => config.resolve(fixture),
        (BackendChoice::Config | BackendChoice::Http, Some(BackendConfig::Http(http))) => {
            return Ok(Arc::new(HttpBackend::new(http.clone())?));
        }
        (BackendChoice::Http, _) => bail!(
            "config '{}' has no http backend; add a [backend] section with kind = \"http\", base_url and model",
            config.name
        ),
        (BackendChoice::Config, None) => bail!(
            "config '{}' names no backend; pass --backend scripted:<fixture> or --backend http",
            config.name
        ),
    };
    if !fixture.exists() {
        bail!("fixture file {} does not exist", fixture.display());
    }
    let backend = ScriptedBackend::from_jsonl_file(&fixture).map_err(|e| anyhow!("fixture {}: {e}", fixture.display()))?;
    if skip > backend.len() {
        bail!(
            "fixture {} has {} entries but the snapshot already used {skip}",
            fixture.display(),
            backend.len()
        );
    }
    Ok(Arc::new(backend.skip(skip)))
}

/// Text printed by `run` and `resume`.
pub fn render_outcome(state: &WorkflowState) -> String {
    let mut out = String::new();
    if let Some(result) = &state.final_result {
        out.push_str(result.trim_end());
        out.push_str("\n\n");
    }
    match state.verdict {
        Some(v) => writeln!(out, "verdict: {v}").unwrap(),
        None => out.push_str("verdict: none\n"),
    }
    if let (Some(false), Some(reason)) = (state.verdict, &state.reason) {
        writeln!(out, "reason: {reason}").unwrap();
    }
    if state.phase == Phase::Failed {
        writeln!(out, "failed: {}", state.failure.as_deref().unwrap_or("unknown error")).unwrap();
    }
    out
}

pub fn write_events(path: &Path, events: &[WorkflowEvent]) -> Result<()> {
    let mut text = String::new();
    for e in events {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_events(text: &str) -> Result<Vec<WorkflowEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect()
}

/// Human readable summary of a snapshot or JSONL event log.
pub fn inspect(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_snapshot = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .is_some_and(|v| v.get("schema_version").is_some());
    if is_snapshot {
        let snap = Snapshot::load(path)?;
        Ok(describe_snapshot(&snap))
    } else {
        let events = read_events(&text).with_context(|| format!("{} is neither a snapshot nor an event log", path.display()))?;
        Ok(describe_events(&events))
    }
}

fn describe_snapshot(snap: &Snapshot) -> String {
    let s = &snap.state;
    let mut out = String::new();
    writeln!(out, "workflow {} ({})", s.workflow_id, s.config_name).unwrap();
    writeln!(out, "phase: {:?}", s.phase).unwrap();
    writeln!(out, "instruction: {}", s.instruction).unwrap();
    writeln!(out, "replans: {}", s.replan_count).unwrap();
    if let Some(v) = s.verdict {
        writeln!(out, "verdict: {v}").unwrap();
    }
    if let Some(path) = &snap.config_path {
        writeln!(out, "config: {}", path.display()).unwrap();
    }
    out.push_str("tasks:\n");
    for task in s.queue.tasks() {
        let deps = if task.depends_on.is_empty() {
            String::new()
        } else {
            format!(" after {}", task.depends_on.iter().cloned().collect::<Vec<_>>().join(", "))
        };
        writeln!(out, "  {:<8} {}{}: {}", format!("{:?}", task.status), task.id, deps, task.description).unwrap();
    }
    let calls = snap.model_calls();
    writeln!(out, "events: {} ({calls} model calls)", s.event_log.len()).unwrap();
    writeln!(out, "episodes: {}", snap.episodes.len()).unwrap();
    out
}

fn describe_events(events: &[WorkflowEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let payload = if e.kind == EventKind::ModelCall {
            // hashes only add noise here
            let agent = e.payload.get("agent").and_then(|v| v.as_str()).unwrap_or("?");
            let task = e.payload.get("task_id").and_then(|v| v.as_str()).unwrap_or("-");
            format!("{agent} on {task}")
        } else {
            e.payload.to_string()
        };
        writeln!(
            out,
            "{:>5} {} {:?} {}",
            e.sequence_no,
            e.timestamp.format("%H:%M:%S%.3f"),
            e.kind,
            payload
        )
        .unwrap();
    }
    out
}
