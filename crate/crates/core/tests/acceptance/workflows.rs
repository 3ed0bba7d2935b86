use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use taskweave_core::agents::{AgentSpec, AgentUnit, Strategy, Topology};
use taskweave_core::backend::{ScriptEntry, ScriptedBackend};
use taskweave_core::coordinator::{Engine, Phase, RunOptions, Snapshot, WorkflowConfig, WorkflowState};
use taskweave_core::event::{EventKind, WorkflowEvent};
use taskweave_core::queue::TaskStatus;

use crate::common::{exchanges_of, shipped, Shipped, SHIPPED};

fn tools_used(state: &WorkflowState, tool: &str) -> usize {
    state
        .event_log
        .iter()
        .filter(|e| e.kind == EventKind::ToolInvoked && e.payload["tool"] == tool)
        .count()
}

fn shape(name: &str, wf: &Shipped, state: &WorkflowState, workspace: &Path) -> Result<(), String> {
    let tasks: Vec<_> = state.queue.tasks().collect();
    match name {
        "rag-qa" => {
            let sink = tasks.iter().find(|t| tasks.iter().all(|o| !o.depends_on.contains(&t.id))).unwrap();
            let subs: Vec<_> = tasks.iter().filter(|t| t.id != sink.id).collect();
            ensure!(subs.len() >= 2, "rag-qa planned {} sub-questions", subs.len());
            ensure!(subs.iter().all(|t| sink.depends_on.contains(&t.id)), "synthesis does not use every sub-answer");
            ensure!(tools_used(state, "semantic_search") >= subs.len(), "sub-questions answered without search");
            let answer = wf.expected_file("expected_answer.txt");
            ensure!(state.final_result.as_deref() == Some(answer.trim_end()), "rag-qa answer differs");
        }
        "actor-critic" => {
            let rules = wf.expected_file("rules.txt").lines().filter(|l| !l.trim().is_empty()).count();
            ensure!(tasks.len() == rules, "{} tasks for {rules} rules", tasks.len());
            for t in tasks.iter().skip(1) {
                ensure!(t.depends_on.len() == 1, "rule task {} is not chained", t.id);
            }
            for trace in &state.traces {
                let agents = trace.agents();
                for (i, a) in agents.iter().enumerate() {
                    let want = if i % 2 == 0 { "Editor" } else { "Critic" };
                    ensure!(*a == want, "task {} step {i} by {a}", trace.task_id);
                }
                ensure!(trace.terminated_by.as_deref() == Some("Critic"), "task {} not closed by the critic", trace.task_id);
            }
            let doc = std::fs::read_to_string(workspace.join("document.md")).map_err(|e| e.to_string())?;
            ensure!(doc == wf.expected_file("expected_document.md"), "edited document differs");
        }
        "coding-joint" => {
            for trace in &state.traces {
                let agents = trace.agents();
                let distinct: std::collections::BTreeSet<&str> = agents.iter().copied().collect();
                ensure!(distinct.len() == 3, "joint task used {distinct:?}");
                for i in 1..agents.len() {
                    if agents[i] != agents[i - 1] {
                        let next = trace.steps[i - 1].summary.next.clone().unwrap_or_default();
                        ensure!(next == format!("@{}", agents[i]), "{} reached without a mention", agents[i]);
                    }
                }
            }
            ensure!(tools_used(state, "file_io") >= 1 && tools_used(state, "code_execution") >= 1, "tools not exercised");
            let code = std::fs::read_to_string(workspace.join("slugify.py")).map_err(|e| e.to_string())?;
            ensure!(code == wf.expected_file("expected_slugify.py"), "written module differs");
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn stable(events: &[WorkflowEvent]) -> Vec<(EventKind, Value)> {
    events
        .iter()
        .filter(|e| e.kind != EventKind::Resumed)
        .map(|e| (e.kind, e.payload.clone()))
        .collect()
}

fn fixed_id(name: &str) -> RunOptions {
    RunOptions {
        workflow_id: Some(format!("accept-{name}")),
        ..RunOptions::default()
    }
}

pub fn end_to_end() -> Result<String, String> {
    let start = Instant::now();
    let mut summary = Vec::new();
    for name in SHIPPED {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let wf = shipped(name, dir.path());
            let (state, exchanges) = wf.run(&fixed_id(name));
            ensure!(state.phase == Phase::Done, "{name} ended {:?}: {:?}", state.phase, state.failure);
            ensure!(state.verdict == Some(true), "{name} verdict {:?}", state.verdict);
            ensure!(wf.backend(0).len() == exchanges.len(), "{name} left fixture entries unused");
            shape(name, &wf, &state, dir.path()).map_err(|e| format!("{name}: {e}"))?;
            runs.push((state, exchanges));
        }
        let (a, b) = (&runs[0], &runs[1]);
        ensure!(a.0.final_result == b.0.final_result, "{name}: repeated runs disagree on the result");
        ensure!(stable(&a.0.event_log) == stable(&b.0.event_log), "{name}: repeated runs emit different events");
        ensure!(
            a.1.iter().map(|x| &x.prompt).eq(b.1.iter().map(|x| &x.prompt)),
            "{name}: repeated runs send different prompts"
        );
        summary.push(format!("{name} {} tasks", a.0.queue.tasks().count()));
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "shipped workflows took {elapsed:?}");
    Ok(format!("{} done with verdict true, twice each, identical", summary.join(", ")))
}

fn snapshots(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map(|d| d.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.extension().is_some_and(|x| x == "json")).collect())
        .unwrap_or_default();
    files.sort();
    files
}

pub fn resume_equivalence() -> Result<String, String> {
    let mut resumed_runs = 0;
    for name in SHIPPED {
        let base = tempfile::tempdir().map_err(|e| e.to_string())?;
        let wf = shipped(name, &base.path().join("ws"));
        let opts = RunOptions {
            snapshot_dir: Some(base.path().join("snaps")),
            ..fixed_id(name)
        };
        let (full, _) = wf.run(&opts);
        ensure!(full.phase == Phase::Done, "{name}: uninterrupted run ended {:?}", full.phase);
        let count = snapshots(&base.path().join("snaps")).len();
        ensure!(count == full.queue.tasks().count(), "{name}: {count} snapshots for {} tasks", full.queue.tasks().count());

        for k in 1..=count {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let ws = dir.path().join("ws");
            let wf = shipped(name, &ws);
            let halted_opts = RunOptions {
                snapshot_dir: Some(dir.path().join("snaps")),
                halt_after_completed: Some(k),
                ..fixed_id(name)
            };
            let (halted, _) = wf.run(&halted_opts);
            ensure!(halted.queue.count(TaskStatus::Done) == k, "{name}: halt after {k} left {} done", halted.queue.count(TaskStatus::Done));
            let latest = snapshots(&dir.path().join("snaps")).pop().ok_or(format!("{name}: no snapshot after {k}"))?;
            let snap = Snapshot::load(&latest).map_err(|e| e.to_string())?;
            let backend = wf.backend(snap.model_calls());
            let engine = wf.engine(&backend);
            let resumed = engine
                .resume(snap, &RunOptions { snapshot_dir: Some(dir.path().join("again")), ..RunOptions::default() })
                .map_err(|e| format!("{name}: {e}"))?;
            ensure!(resumed.phase == Phase::Done, "{name} k={k}: resumed run ended {:?}: {:?}", resumed.phase, resumed.failure);
            ensure!(resumed.final_result == full.final_result, "{name} k={k}: final result differs");
            ensure!(resumed.verdict == full.verdict, "{name} k={k}: verdict differs");
            ensure!(stable(&resumed.event_log) == stable(&full.event_log), "{name} k={k}: event log differs");
            if name == "actor-critic" {
                let doc = std::fs::read_to_string(ws.join("document.md")).map_err(|e| e.to_string())?;
                ensure!(doc == wf.expected_file("expected_document.md"), "{name} k={k}: document differs");
            }
            resumed_runs += 1;
        }
    }
    Ok(format!("{resumed_runs} resumed runs match their uninterrupted runs"))
}

fn secret_config() -> WorkflowConfig {
    let unit = AgentUnit::new(
        "solo",
        Topology::Independent,
        vec![AgentSpec::new("Writer", "You write short answers.").with_strategy(Strategy::react())],
    );
    let mut c = WorkflowConfig::new("purity", vec![unit]);
    c.max_concurrency = 1;
    c
}

pub fn verifier_purity() -> Result<String, String> {
    let mut checked = 0;
    for name in SHIPPED {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let wf = shipped(name, dir.path());
        let (state, exchanges) = wf.run(&fixed_id(name));
        let verifier = &wf.config.verifier.name;
        let prompts = exchanges_of(&state, &exchanges, verifier);
        ensure!(prompts.len() == 1 + state.replan_count, "{name}: {} verifier calls", prompts.len());
        let result = state.final_result.clone().unwrap_or_default();
        let sinks: Vec<String> = state.queue.sinks().iter().map(|t| t.id.clone()).collect();
        for x in prompts {
            ensure!(x.prompt.contains(state.instruction.trim()), "{name}: verifier did not see the instruction");
            ensure!(x.prompt.contains(result.trim()), "{name}: verifier did not see the result");
            for t in state.queue.tasks().filter(|t| !sinks.contains(&t.id)) {
                let r = t.result.clone().unwrap_or_default();
                if !result.contains(r.trim()) {
                    ensure!(!x.prompt.contains(r.trim()), "{name}: verifier saw the result of {}", t.id);
                }
                ensure!(!x.prompt.contains(&t.description), "{name}: verifier saw the description of {}", t.id);
            }
            checked += 1;
        }
    }

    let plan = r#"{"tasks": [{"id": "draft", "description": "draft privately", "depends_on": []}, {"id": "final", "description": "publish", "depends_on": ["draft"]}]}"#;
    let backend = Arc::new(ScriptedBackend::new(vec![
        ScriptEntry::new(Some("Decompose"), plan),
        ScriptEntry::new(Some("draft privately"), "Thought: t\nFINAL ANSWER: zebra-7781 intermediate"),
        ScriptEntry::new(Some("zebra-7781"), "Thought: t\nFINAL ANSWER: published text"),
        ScriptEntry::new(Some("Result:"), "true"),
    ]));
    let engine = Engine::new(secret_config(), backend.clone()).map_err(|e| e.to_string())?;
    let state = engine.run("write and publish", &RunOptions::default());
    ensure!(state.phase == Phase::Done, "probe workflow ended {:?}: {:?}", state.phase, state.failure);
    let last = backend.transcript().pop().ok_or("no verifier call")?;
    ensure!(!last.prompt.contains("zebra-7781"), "verifier saw an intermediate result");
    ensure!(!last.prompt.contains("draft privately"), "verifier saw a task description");
    ensure!(last.prompt.contains("published text") && last.prompt.contains("write and publish"), "verifier input incomplete");
    Ok(format!("{checked} verifier prompts hold only instruction and final result"))
}
