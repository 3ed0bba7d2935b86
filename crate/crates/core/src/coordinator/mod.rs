//! Plan, execute, verify; replanning, human feedback, snapshot and resume.

mod config;
mod snapshot;

pub use config::{BackendConfig, CodeExecutionConfig, RoleSpec, ToolsConfig, WorkflowConfig};
pub use snapshot::{Snapshot, SNAPSHOT_SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, MutexGuard};
use std::thread;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{execute_task, match_unit, ExecContext, ExecutionTrace, Recorder, Resources, TaskOutcome, Transcripts};
use crate::backend::{ChatBackend, ChatRequest};
use crate::control::{Control, FeedbackEnvelope, FeedbackError, FeedbackHub, FeedbackKind};
use crate::event::{EventKind, EventLog, WorkflowEvent};
use crate::message::Message;
use crate::prompts::{parse_plan, parse_verdict_detail, render_system, SystemPrompt};
use crate::queue::{TaskQueue, TaskSpec, TaskStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Planning,
    Executing,
    Verifying,
    Replanning,
    Done,
    Failed,
    Paused,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoordinatorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("snapshot was taken under a different workflow configuration")]
    ConfigFingerprintMismatch,
    #[error("cannot {action} a workflow in phase {phase:?}")]
    InvalidTransition { action: &'static str, phase: Phase },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub workflow_id: String,
    pub config_name: String,
    pub instruction: String,
    pub queue: TaskQueue,
    pub phase: Phase,
    /// Phase to return to when a paused workflow resumes.
    pub paused_from: Option<Phase>,
    pub final_result: Option<String>,
    pub verdict: Option<bool>,
    /// Verifier reason or task failure behind the last rejection.
    pub reason: Option<String>,
    pub replan_count: usize,
    /// Tasks already announced with `TaskReleased` in the current plan.
    pub released: BTreeSet<String>,
    pub task_units: BTreeMap<String, String>,
    pub traces: Vec<ExecutionTrace>,
    pub failure: Option<String>,
    pub created_at: DateTime<Utc>,
    pub event_log: Vec<WorkflowEvent>,
}

impl WorkflowState {
    fn new(workflow_id: String, config_name: &str, instruction: &str) -> Self {
        Self {
            workflow_id,
            config_name: config_name.into(),
            instruction: instruction.into(),
            queue: TaskQueue::default(),
            phase: Phase::Planning,
            paused_from: None,
            final_result: None,
            verdict: None,
            reason: None,
            replan_count: 0,
            released: BTreeSet::new(),
            task_units: BTreeMap::new(),
            traces: Vec::new(),
            failure: None,
            created_at: Utc::now(),
            event_log: Vec::new(),
        }
    }

    /// The phase work continues in, looking through a pause.
    pub fn active_phase(&self) -> Phase {
        match self.phase {
            Phase::Paused => self.paused_from.unwrap_or(Phase::Executing),
            p => p,
        }
    }

    pub fn trace(&self, task_id: &str) -> Option<&ExecutionTrace> {
        self.traces.iter().rev().find(|t| t.task_id == task_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub id: String,
    pub description: String,
    pub status: TaskStatus,
    pub depends_on: Vec<String>,
    pub unit: Option<String>,
}

/// Read-consistent view of a workflow for API clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDescriptor {
    pub workflow_id: String,
    pub config_name: String,
    pub instruction: String,
    pub phase: Phase,
    pub replan_count: usize,
    pub verdict: Option<bool>,
    pub final_result: Option<String>,
    pub failure: Option<String>,
    pub created_at: DateTime<Utc>,
    pub tasks: Vec<TaskSummary>,
    pub outstanding_requests: Vec<String>,
    pub event_count: usize,
    pub events_url: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Fixed id instead of a random one.
    pub workflow_id: Option<String>,
    /// Where a snapshot is written after every completed task.
    pub snapshot_dir: Option<PathBuf>,
    /// Stop driving after this many task completions, leaving the workflow
    /// mid-execution as a crash would.
    pub halt_after_completed: Option<usize>,
}

struct Shared {
    id: String,
    state: Mutex<WorkflowState>,
    events: EventLog,
    feedback: FeedbackHub,
    control: Control,
    transcripts: Transcripts,
}

/// Handle to one workflow run. Clones share the run; any thread may observe,
/// pause, resume, or inject feedback while the owner drives it.
#[derive(Clone)]
pub struct Workflow {
    shared: Arc<Shared>,
}

impl Workflow {
    fn new(state: WorkflowState, events: EventLog, transcripts: BTreeMap<String, BTreeMap<String, Vec<Message>>>) -> Self {
        Self {
            shared: Arc::new(Shared {
                id: state.workflow_id.clone(),
                state: Mutex::new(state),
                events,
                feedback: FeedbackHub::new(),
                control: Control::new(),
                transcripts: Arc::new(Mutex::new(transcripts)),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, WorkflowState> {
        self.shared.state.lock().expect("workflow state poisoned")
    }

    pub fn id(&self) -> &str {
        &self.shared.id
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    pub fn feedback(&self) -> &FeedbackHub {
        &self.shared.feedback
    }

    pub fn control(&self) -> &Control {
        &self.shared.control
    }

    pub fn phase(&self) -> Phase {
        self.lock().phase
    }

    /// Current state with the event log filled in.
    pub fn state(&self) -> WorkflowState {
        let mut s = self.lock().clone();
        s.event_log = self.shared.events.events();
        s
    }

    pub fn transcripts(&self) -> BTreeMap<String, BTreeMap<String, Vec<Message>>> {
        self.shared.transcripts.lock().expect("transcripts poisoned").clone()
    }

    pub fn descriptor(&self) -> WorkflowDescriptor {
        let s = self.lock();
        WorkflowDescriptor {
            workflow_id: s.workflow_id.clone(),
            config_name: s.config_name.clone(),
            instruction: s.instruction.clone(),
            phase: s.phase,
            replan_count: s.replan_count,
            verdict: s.verdict,
            final_result: s.final_result.clone(),
            failure: s.failure.clone(),
            created_at: s.created_at,
            tasks: s
                .queue
                .tasks()
                .map(|t| TaskSummary {
                    id: t.id.clone(),
                    description: t.description.clone(),
                    status: t.status,
                    depends_on: t.depends_on.iter().cloned().collect(),
                    unit: s.task_units.get(&t.id).cloned(),
                })
                .collect(),
            outstanding_requests: self.shared.feedback.outstanding(),
            event_count: self.shared.events.len(),
            events_url: format!("/workflows/{}/events", s.workflow_id),
        }
    }

    fn emit(&self, kind: EventKind, payload: serde_json::Value) -> u64 {
        self.shared.events.append(kind, payload)
    }

    /// Moves to `to`; while paused the change is remembered for resume.
    fn set_phase(&self, to: Phase) {
        let mut s = self.lock();
        if s.phase == Phase::Paused && !to.is_terminal() {
            s.paused_from = Some(to);
            return;
        }
        let from = s.phase;
        if from == to {
            return;
        }
        s.phase = to;
        s.paused_from = None;
        drop(s);
        self.emit(EventKind::PhaseChanged, json!({"from": from, "to": to}));
    }

    pub fn pause(&self) -> Result<(), CoordinatorError> {
        let mut s = self.lock();
        if s.phase.is_terminal() || s.phase == Phase::Paused {
            return Err(CoordinatorError::InvalidTransition {
                action: "pause",
                phase: s.phase,
            });
        }
        self.shared.control.pause();
        let from = std::mem::replace(&mut s.phase, Phase::Paused);
        s.paused_from = Some(from);
        drop(s);
        self.emit(EventKind::PhaseChanged, json!({"from": from, "to": Phase::Paused}));
        Ok(())
    }

    pub fn resume(&self) -> Result<(), CoordinatorError> {
        let mut s = self.lock();
        if s.phase != Phase::Paused {
            return Err(CoordinatorError::InvalidTransition {
                action: "resume",
                phase: s.phase,
            });
        }
        let to = s.paused_from.take().unwrap_or(Phase::Executing);
        s.phase = to;
        drop(s);
        self.emit(EventKind::PhaseChanged, json!({"from": Phase::Paused, "to": to}));
        self.shared.control.resume();
        Ok(())
    }

    /// Stops the run at its next model call; running tasks fail.
    pub fn cancel(&self) {
        self.shared.control.cancel();
        self.shared.feedback.close();
    }

    pub fn inject_feedback(&self, envelope: FeedbackEnvelope) -> Result<String, FeedbackError> {
        if envelope.workflow_id != self.shared.id {
            return Err(FeedbackError::NoSuchWorkflow(envelope.workflow_id));
        }
        let payload = json!({
            "task_id": envelope.task_id,
            "kind": envelope.kind,
            "content": envelope.content,
        });
        match envelope.kind {
            FeedbackKind::IncidentalObservation => {
                let s = self.lock();
                if s.phase.is_terminal() {
                    return Err(FeedbackError::NotRunning);
                }
                if let Some(t) = &envelope.task_id {
                    match s.queue.get(t).map(|t| t.status) {
                        None => return Err(FeedbackError::UnknownTask(t.clone())),
                        Some(TaskStatus::Done | TaskStatus::Failed) => {
                            log::warn!("dropping feedback for finished task '{t}'");
                            return Err(FeedbackError::TaskAlreadyDone(t.clone()));
                        }
                        Some(_) => {}
                    }
                }
                drop(s);
                self.emit(EventKind::FeedbackInjected, payload);
                self.shared
                    .feedback
                    .push_incidental(envelope.task_id.clone(), envelope.content);
                Ok(envelope.task_id.unwrap_or_default())
            }
            FeedbackKind::HumanProxyResponse => {
                let open = self.shared.feedback.outstanding();
                let known = match &envelope.task_id {
                    Some(t) => open.contains(t),
                    None => open.len() == 1,
                };
                if !known {
                    return Err(FeedbackError::NoOutstandingRequest);
                }
                self.emit(EventKind::FeedbackInjected, payload);
                self.shared
                    .feedback
                    .respond(envelope.task_id.as_deref(), envelope.content)
            }
        }
    }

}

enum ExecEnd {
    AllDone,
    Halted,
    TaskFailed(String),
    Fatal(String),
}

/// Runs workflows of one configuration against one backend.
pub struct Engine {
    config: Arc<WorkflowConfig>,
    resources: Arc<Resources>,
    backend: Arc<dyn ChatBackend>,
    fingerprint: String,
}

impl Engine {
    pub fn new(config: WorkflowConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, CoordinatorError> {
        config.validate()?;
        let resources = config.resources()?;
        Ok(Self::with_resources(config, resources, backend))
    }

    pub fn with_resources(config: WorkflowConfig, resources: Resources, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            fingerprint: config.fingerprint(),
            config: Arc::new(config),
            resources: Arc::new(resources),
            backend,
        }
    }

    pub fn config(&self) -> &WorkflowConfig {
        &self.config
    }

    pub fn resources(&self) -> &Resources {
        &self.resources
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Snapshot of `wf` now, including the episodes it stored.
    pub fn snapshot(&self, wf: &Workflow) -> Snapshot {
        let state = wf.state();
        let episodes = self
            .resources
            .episodes
            .episodes()
            .into_iter()
            .filter(|e| e.workflow_id == state.workflow_id)
            .collect();
        Snapshot {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            config_fingerprint: self.fingerprint.clone(),
            config_path: self.config.source.clone(),
            transcripts: wf.transcripts(),
            episodes,
            state,
        }
    }

    /// Creates a workflow in the Planning phase without running it. The
    /// workspace is reset to its seed files.
    pub fn start(&self, instruction: &str, opts: &RunOptions) -> Workflow {
        if let Err(e) = self.config.seed_workspace(true) {
            log::warn!("{e}");
        }
        let id = opts
            .workflow_id
            .clone()
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let wf = Workflow::new(WorkflowState::new(id, &self.config.name, instruction), EventLog::new(), BTreeMap::new());
        wf.emit(EventKind::PhaseChanged, json!({"from": null, "to": Phase::Planning}));
        wf
    }

    pub fn run(&self, instruction: &str, opts: &RunOptions) -> WorkflowState {
        let wf = self.start(instruction, opts);
        self.drive(&wf, opts)
    }

    /// Rebuilds a workflow from a snapshot. Tasks that were running restart
    /// from their beginning.
    pub fn restore(&self, snapshot: Snapshot) -> Result<Workflow, CoordinatorError> {
        if snapshot.schema_version != SNAPSHOT_SCHEMA_VERSION {
            return Err(CoordinatorError::SchemaVersionMismatch {
                found: snapshot.schema_version,
                expected: SNAPSHOT_SCHEMA_VERSION,
            });
        }
        if snapshot.config_fingerprint != self.fingerprint {
            return Err(CoordinatorError::ConfigFingerprintMismatch);
        }
        let known: BTreeSet<String> = self.resources.episodes.episodes().into_iter().map(|e| e.episode_id).collect();
        for episode in snapshot.episodes {
            if !known.contains(&episode.episode_id) {
                self.resources
                    .episodes
                    .store(episode)
                    .map_err(|e| CoordinatorError::Snapshot(e.to_string()))?;
            }
        }
        let mut state = snapshot.state;
        let events = EventLog::from_events(std::mem::take(&mut state.event_log));
        let restarted = state.queue.reset_running();
        let mut transcripts = snapshot.transcripts;
        for id in &restarted {
            transcripts.remove(id);
        }
        if state.phase == Phase::Paused {
            state.phase = state.paused_from.take().unwrap_or(Phase::Executing);
        }
        let phase = state.phase;
        let wf = Workflow::new(state, events, transcripts);
        wf.emit(EventKind::Resumed, json!({"phase": phase, "restarted": restarted}));
        Ok(wf)
    }

    pub fn resume(&self, snapshot: Snapshot, opts: &RunOptions) -> Result<WorkflowState, CoordinatorError> {
        let wf = self.restore(snapshot)?;
        Ok(self.drive(&wf, opts))
    }

    /// Drives `wf` until Done or Failed and returns the final state.
    pub fn drive(&self, wf: &Workflow, opts: &RunOptions) -> WorkflowState {
        loop {
            let phase = wf.lock().active_phase();
            match phase {
                Phase::Planning | Phase::Replanning => match self.plan(wf) {
                    Ok(queue) => {
                        {
                            let mut s = wf.lock();
                            s.queue = queue;
                            s.released.clear();
                            s.final_result = None;
                        }
                        wf.set_phase(Phase::Executing);
                    }
                    Err(e) => self.fail(wf, format!("planning failed: {e}")),
                },
                Phase::Executing => match self.execute(wf, opts) {
                    ExecEnd::AllDone => match self.assemble(wf) {
                        Ok(()) => wf.set_phase(Phase::Verifying),
                        Err(e) => self.fail(wf, e),
                    },
                    ExecEnd::Halted => break,
                    ExecEnd::TaskFailed(reason) => self.reject(wf, reason),
                    ExecEnd::Fatal(reason) => self.fail(wf, reason),
                },
                Phase::Verifying => match self.verify(wf) {
                    Ok((true, _)) => wf.set_phase(Phase::Done),
                    Ok((false, reason)) => self.reject(wf, reason),
                    Err(e) => self.fail(wf, format!("verification failed: {e}")),
                },
                Phase::Done | Phase::Failed | Phase::Paused => break,
            }
        }
        wf.shared.feedback.close();
        wf.state()
    }

    fn fail(&self, wf: &Workflow, reason: String) {
        log::error!("workflow {} failed: {reason}", wf.id());
        wf.lock().failure = Some(reason);
        wf.set_phase(Phase::Failed);
    }

    /// Replans while the budget allows, else fails.
    fn reject(&self, wf: &Workflow, reason: String) {
        let mut s = wf.lock();
        s.reason = Some(reason.clone());
        if s.replan_count < self.config.max_replans {
            s.replan_count += 1;
            drop(s);
            wf.set_phase(Phase::Replanning);
        } else {
            drop(s);
            self.fail(wf, format!("rejected after {} replans: {reason}", self.config.max_replans));
        }
    }

    fn recorder<'a>(&'a self, wf: &'a Workflow, agent: &'a str) -> Recorder<'a> {
        Recorder {
            inner: self.backend.as_ref(),
            events: &wf.shared.events,
            control: Some(&wf.shared.control),
            task_id: None,
            agent,
        }
    }

    fn units_block(&self) -> String {
        let mut out = String::from("Agent units (use one of these names as a task's unit_hint, or null):");
        for unit in &self.config.units {
            let summary = unit
                .agents
                .iter()
                .map(|a| a.persona.lines().next().unwrap_or_default().trim().to_string())
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("\n- {}: {}", unit.name, summary));
        }
        out
    }

    fn plan(&self, wf: &Workflow) -> Result<TaskQueue, String> {
        let (instruction, round, rejected, reason) = {
            let s = wf.lock();
            (s.instruction.clone(), s.replan_count, s.final_result.clone(), s.reason.clone())
        };
        let fixed = self.config.fixed_plan().map_err(|e| e.to_string())?;
        if let Some(specs) = fixed {
            let queue = TaskQueue::build(&specs).map_err(|e| e.to_string())?;
            wf.emit(EventKind::PlanCreated, json!({"round": round, "predefined": true, "tasks": specs}));
            return Ok(queue);
        }
        let planner = &self.config.planner;
        let system = render_system(
            &self.resources.templates.planner,
            &SystemPrompt {
                persona: planner.persona.clone(),
                agents_block: self.units_block(),
                ..SystemPrompt::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let mut request = format!("Instruction:\n{}", instruction.trim());
        if round > 0 {
            request.push_str(&format!(
                "\n\nA previous attempt was rejected.\n\nRejected result:\n{}\n\nReason: {}\n\nCreate a new plan for the instruction.",
                rejected.as_deref().unwrap_or("(no result was produced)").trim(),
                reason.as_deref().unwrap_or("unspecified").trim()
            ));
        }
        let mut messages = vec![Message::system(system), Message::user(request)];
        let recorder = self.recorder(wf, &planner.name);
        let mut last_error = String::new();
        for attempt in 0..2 {
            let req = ChatRequest::new(messages.clone(), &planner.params).map_err(|e| e.to_string())?;
            let raw = recorder.chat(&req).map_err(|e| e.to_string())?;
            let parsed = parse_plan(&raw)
                .map_err(|e| e.to_string())
                .and_then(|specs| TaskQueue::build(&specs).map(|q| (specs, q)).map_err(|e| e.to_string()));
            match parsed {
                Ok((specs, queue)) => {
                    wf.emit(
                        EventKind::PlanCreated,
                        json!({"round": round, "predefined": false, "tasks": specs, "attempts": attempt + 1}),
                    );
                    return Ok(queue);
                }
                Err(e) => {
                    log::warn!("planner output rejected: {e}");
                    messages.push(Message::assistant(raw));
                    messages.push(Message::user(format!(
                        "The plan could not be used: {e}. Respond again with a single JSON object in the required format."
                    )));
                    last_error = e;
                }
            }
        }
        Err(last_error)
    }

    fn execute(&self, wf: &Workflow, opts: &RunOptions) -> ExecEnd {
        let (tx, rx) = mpsc::channel::<(String, TaskOutcome)>();
        let instruction = wf.lock().instruction.clone();
        let human_timeout = self.config.human_timeout();
        thread::scope(|scope| {
            let mut running = 0usize;
            let mut completed = 0usize;
            let mut halted: Option<ExecEnd> = None;
            loop {
                if halted.is_none() && wf.shared.control.wait_while_paused().is_err() {
                    halted = Some(ExecEnd::Fatal("workflow cancelled".into()));
                }
                if halted.is_none() {
                    let released: Vec<String> = {
                        let mut s = wf.lock();
                        let fresh: Vec<String> = s
                            .queue
                            .ready_tasks()
                            .into_iter()
                            .map(|t| t.id)
                            .filter(|id| !s.released.contains(id))
                            .collect();
                        s.released.extend(fresh.iter().cloned());
                        fresh
                    };
                    for id in released {
                        wf.emit(EventKind::TaskReleased, json!({"task_id": id}));
                    }
                    while running < self.config.max_concurrency {
                        let next = {
                            let s = wf.lock();
                            let found = s
                                .queue
                                .tasks()
                                .find(|t| t.status == TaskStatus::Ready && s.released.contains(&t.id))
                                .cloned();
                            found
                        };
                        let Some(task) = next else { break };
                        let unit = match match_unit(&self.config.units, &task, self.resources.embedder.as_ref()) {
                            Ok(u) => u,
                            Err(e) => {
                                halted = Some(ExecEnd::Fatal(format!("task '{}': {e}", task.id)));
                                break;
                            }
                        };
                        let task = {
                            let mut s = wf.lock();
                            s.task_units.insert(task.id.clone(), unit.name.clone());
                            s.queue.start_task(&task.id).expect("ready task starts")
                        };
                        wf.emit(
                            EventKind::TaskStarted,
                            json!({
                                "task_id": task.id,
                                "unit": unit.name,
                                "depends_on": task.depends_on,
                            }),
                        );
                        running += 1;
                        let tx = tx.clone();
                        let instruction = &instruction;
                        scope.spawn(move || {
                            let ctx = ExecContext {
                                workflow_id: &wf.shared.id,
                                instruction,
                                termination_literal: &self.config.termination_literal,
                                episodic: &self.config.episodic,
                                resources: &self.resources,
                                backend: self.backend.as_ref(),
                                events: &wf.shared.events,
                                feedback: &wf.shared.feedback,
                                control: &wf.shared.control,
                                transcripts: &wf.shared.transcripts,
                                human_timeout,
                            };
                            let outcome = execute_task(&ctx, unit, &task);
                            let _ = tx.send((task.id.clone(), outcome));
                        });
                    }
                }
                if running == 0 {
                    break;
                }
                let (id, outcome) = rx.recv().expect("task threads send before exiting");
                running -= 1;
                if self.record(wf, &id, outcome, opts, &mut halted) {
                    completed += 1;
                    if halted.is_none() && opts.halt_after_completed == Some(completed) {
                        halted = Some(ExecEnd::Halted);
                    }
                }
            }
            match halted {
                Some(end) => end,
                None if wf.lock().queue.all_done() => ExecEnd::AllDone,
                None => ExecEnd::Fatal("no task can be released".into()),
            }
        })
    }

    /// Applies a task outcome; true if the task completed.
    fn record(&self, wf: &Workflow, id: &str, outcome: TaskOutcome, opts: &RunOptions, halted: &mut Option<ExecEnd>) -> bool {
        wf.lock().traces.push(outcome.trace);
        match outcome.result {
            Ok(result) => {
                wf.lock()
                    .queue
                    .complete_task(id, result.clone())
                    .expect("running task completes");
                wf.shared.feedback.discard_for(id);
                wf.emit(EventKind::TaskCompleted, json!({"task_id": id, "result": result}));
                if let Some(dir) = &opts.snapshot_dir {
                    if let Err(e) = self.write_snapshot(wf, dir, id) {
                        log::error!("snapshot after task '{id}' failed: {e}");
                    }
                }
                true
            }
            Err(e) => {
                let message = e.to_string();
                wf.lock().queue.fail_task(id, message.clone()).expect("running task fails");
                wf.shared.feedback.discard_for(id);
                wf.emit(EventKind::TaskFailed, json!({"task_id": id, "error": message}));
                let end = if e.is_fatal() {
                    ExecEnd::Fatal(format!("task '{id}': {message}"))
                } else {
                    ExecEnd::TaskFailed(format!("task '{id}' failed: {message}"))
                };
                if !matches!(halted, Some(ExecEnd::Fatal(_))) {
                    *halted = Some(end);
                }
                false
            }
        }
    }

    /// Emits the Snapshot event, then writes the file so the event is part of
    /// the snapshot.
    fn write_snapshot(&self, wf: &Workflow, dir: &Path, after_task: &str) -> Result<PathBuf, CoordinatorError> {
        let completed = wf.lock().queue.count(TaskStatus::Done);
        let seq = wf.emit(EventKind::Snapshot, json!({"after_task": after_task, "completed": completed}));
        let path = dir.join(format!("{}-{:05}.json", wf.id(), seq));
        self.snapshot(wf).save(&path)?;
        Ok(path)
    }

    /// Result of the single sink, or every sink under its id in topological
    /// order.
    fn assemble(&self, wf: &Workflow) -> Result<(), String> {
        let mut s = wf.lock();
        let sinks: BTreeSet<String> = s.queue.sinks().iter().map(|t| t.id.clone()).collect();
        let order = s.queue.topological_order().map_err(|e| e.to_string())?;
        let result_of = |id: &str| s.queue.get(id).and_then(|t| t.result.clone()).unwrap_or_default();
        let result = if sinks.len() == 1 {
            result_of(sinks.iter().next().expect("one sink"))
        } else {
            order
                .iter()
                .filter(|id| sinks.contains(*id))
                .map(|id| format!("## {id}\n{}", result_of(id).trim()))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        s.final_result = Some(result);
        Ok(())
    }

    /// The verifier sees only the instruction and the final result.
    fn verify(&self, wf: &Workflow) -> Result<(bool, String), String> {
        let (instruction, result, round) = {
            let s = wf.lock();
            (s.instruction.clone(), s.final_result.clone().unwrap_or_default(), s.replan_count)
        };
        let verifier = &self.config.verifier;
        let system = render_system(
            &self.resources.templates.verifier,
            &SystemPrompt {
                persona: verifier.persona.clone(),
                ..SystemPrompt::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let user = format!("Instruction:\n{}\n\nResult:\n{}", instruction.trim(), result.trim());
        let req = ChatRequest::new(vec![Message::system(system), Message::user(user)], &verifier.params)
            .map_err(|e| e.to_string())?;
        let raw = self.recorder(wf, &verifier.name).chat(&req).map_err(|e| e.to_string())?;
        let (verdict, reason) = match parse_verdict_detail(&raw) {
            Ok(v) => (v.passed, v.reason),
            Err(e) => {
                log::warn!("{e}; treating the verdict as false");
                (false, format!("unparseable verdict: {}", raw.trim()))
            }
        };
        {
            let mut s = wf.lock();
            s.verdict = Some(verdict);
            s.reason = Some(reason.clone());
        }
        wf.emit(EventKind::VerdictIssued, json!({"verdict": verdict, "reason": reason, "round": round}));
        Ok((verdict, reason))
    }
}

/// Tasks of a plan in spec form, for reports.
pub fn plan_specs(queue: &TaskQueue) -> Vec<TaskSpec> {
    queue
        .tasks()
        .map(|t| TaskSpec {
            id: t.id.clone(),
            description: t.description.clone(),
            depends_on: t.depends_on.iter().cloned().collect(),
            unit_hint: t.unit_hint.clone(),
        })
        .collect()
}
