use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::matcher::{match_mention, select_agent, MatchError, Selection};
use super::{AgentSpec, AgentUnit, Topology};
use crate::backend::{digest, BackendError, ChatBackend, ChatRequest, Embedder};
use crate::control::{Control, FeedbackHub};
use crate::event::{EventKind, EventLog};
use crate::memory::{EpisodeDraft, EpisodeScope, EpisodeStore, QueryContext, ShortMemory};
use crate::message::{Message, Origin, Role};
use crate::prompts::{
    agents_block, detect_termination, make_observation, render_action, render_system, step_iterative,
    termination_instruction, AgentRef, PromptError, StageLabel, StageSequence, StepConfig, StepError, StepOutput,
    SystemPrompt, TemplateSet,
};
use crate::queue::Task;
use crate::tools::{refine, tools_block, truncate, ToolCall, Toolbox};

/// Live per-agent transcripts of running tasks: task id, agent, messages.
pub type Transcripts = Arc<Mutex<BTreeMap<String, BTreeMap<String, Vec<Message>>>>>;

/// Episodic retrieval injected into each task's first message.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodicSettings {
    pub enabled: bool,
    pub k: usize,
    pub scope: EpisodeScope,
    /// Each retrieved result is cut to this many characters.
    pub max_chars: usize,
}

impl Default for EpisodicSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 3,
            scope: EpisodeScope {
                indirect_only: true,
                successful_only: true,
                ..EpisodeScope::default()
            },
            max_chars: 1000,
        }
    }
}

/// Shared, immutable services a task runs against.
pub struct Resources {
    pub toolbox: Toolbox,
    pub embedder: Arc<dyn Embedder>,
    pub episodes: Arc<EpisodeStore>,
    pub templates: TemplateSet,
}

pub struct ExecContext<'a> {
    pub workflow_id: &'a str,
    pub instruction: &'a str,
    pub termination_literal: &'a str,
    pub episodic: &'a EpisodicSettings,
    pub resources: &'a Resources,
    pub backend: &'a dyn ChatBackend,
    pub events: &'a EventLog,
    pub feedback: &'a FeedbackHub,
    pub control: &'a Control,
    pub transcripts: &'a Transcripts,
    /// `None` waits for a human answer indefinitely.
    pub human_timeout: Option<Duration>,
}

/// Wraps a backend so every call waits out a pause and lands in the event
/// log as a `ModelCall` with prompt and response hashes.
pub struct Recorder<'a> {
    pub inner: &'a dyn ChatBackend,
    pub events: &'a EventLog,
    pub control: Option<&'a Control>,
    pub task_id: Option<&'a str>,
    pub agent: &'a str,
}

impl ChatBackend for Recorder<'_> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        if let Some(control) = self.control {
            control
                .wait_while_paused()
                .map_err(|_| BackendError::Unavailable("workflow cancelled".into()))?;
        }
        let response = self.inner.chat(request)?;
        self.events.append(
            EventKind::ModelCall,
            json!({
                "task_id": self.task_id,
                "agent": self.agent,
                "prompt_sha256": digest(&request.render()),
                "response_sha256": digest(&response),
            }),
        );
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationSource {
    Tool,
    Human,
    Framework,
    /// The step's output was handed to another agent.
    Handoff,
    /// The step's output was reported back to the lead.
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub stages: Vec<String>,
    pub action: Option<String>,
    pub next: Option<String>,
    pub terminal: bool,
}

impl StepSummary {
    fn of(out: &StepOutput) -> Self {
        Self {
            stages: out.tags(),
            action: out.action.as_ref().map(|a| a.tool_name.clone()),
            next: out.next_agent.as_ref().map(AgentRef::mention),
            terminal: out.terminal.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub agent: String,
    pub is_lead: bool,
    pub summary: StepSummary,
    pub observation: Option<ObservationSource>,
    /// Broadcast round of a member reply.
    pub round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub task_id: String,
    pub unit: String,
    pub topology: Topology,
    pub steps: Vec<TraceStep>,
    /// Agent whose final answer completed the task.
    pub terminated_by: Option<String>,
}

impl ExecutionTrace {
    pub fn agents(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.agent.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("no final answer within {0} iterations")]
    MaxIterations(usize),
    #[error("lead did not finish within {0} broadcast rounds")]
    BroadcastRounds(usize),
    #[error("agent '{agent}': {source}")]
    Step { agent: String, source: StepError },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("episodic memory: {0}")]
    Memory(String),
    #[error("workflow cancelled")]
    Cancelled,
}

impl ExecError {
    /// Errors that should stop the whole workflow rather than fail one task.
    pub fn is_fatal(&self) -> bool {
        match self {
            ExecError::Step {
                source: StepError::Backend(e),
                ..
            } => e.is_fatal() || e == &BackendError::Unavailable("workflow cancelled".into()),
            ExecError::Match(MatchError::Backend(e)) => e.is_fatal(),
            ExecError::Prompt(_) | ExecError::Config(_) | ExecError::Cancelled => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub result: Result<String, ExecError>,
    pub trace: ExecutionTrace,
}

/// What another agent gets from a step: the final text if any, else the
/// dialog thought (or thought), plus the tool exchange it triggered.
pub fn handoff_payload(out: &StepOutput, observation: Option<&(ToolCall, String)>) -> String {
    if let Some(t) = &out.terminal {
        return t.clone();
    }
    let mut body = out
        .stage(&StageLabel::DialogThought)
        .or_else(|| out.stage(&StageLabel::Thought))
        .or_else(|| {
            out.stages
                .iter()
                .find(|(l, _)| !matches!(l, StageLabel::Next | StageLabel::Action))
                .map(|(_, t)| t.as_str())
        })
        .unwrap_or("Continue")
        .to_string();
    if let Some((call, result)) = observation {
        body.push_str(&format!("\n\nAction: {}\nObservation: {}", render_action(call), result));
    }
    body
}

struct AgentState {
    memory: ShortMemory,
    toolbox: Toolbox,
    sequence: Option<StageSequence>,
    roster: Vec<String>,
}

struct StepResult {
    output: StepOutput,
    observation: Option<(ToolCall, String)>,
}

struct Run<'a> {
    ctx: &'a ExecContext<'a>,
    unit: &'a AgentUnit,
    task: &'a Task,
    opening: String,
    agents: BTreeMap<String, AgentState>,
    trace: ExecutionTrace,
}

impl<'a> Run<'a> {
    fn embedder(&self) -> &dyn Embedder {
        self.ctx.resources.embedder.as_ref()
    }

    fn spec(&self, name: &str) -> &'a AgentSpec {
        self.unit.agent(name).expect("selected agents are unit members")
    }

    fn roster(&self, spec: &AgentSpec) -> Vec<String> {
        let others = || {
            self.unit
                .agents
                .iter()
                .filter(|a| a.name != spec.name)
                .map(|a| a.name.clone())
                .collect::<Vec<_>>()
        };
        match self.unit.topology {
            Topology::Independent => Vec::new(),
            Topology::Sequential | Topology::Joint => others(),
            Topology::Hierarchical | Topology::Broadcast if spec.is_lead => others(),
            Topology::Hierarchical | Topology::Broadcast => self.unit.lead().map(|l| vec![l.name.clone()]).unwrap_or_default(),
        }
    }

    fn ensure_agent(&mut self, name: &str) -> Result<(), ExecError> {
        if self.agents.contains_key(name) {
            return Ok(());
        }
        let spec = self.spec(name);
        let granted = self
            .ctx
            .resources
            .toolbox
            .subset(&spec.tools)
            .map_err(|e| ExecError::Config(format!("agent '{}': {e}", spec.name)))?;
        let refined = refine(&granted, &self.task.description, &spec.refiner, self.embedder())
            .map_err(|e| ExecError::Match(MatchError::Backend(e)))?;
        let names: Vec<&str> = refined.iter().map(|s| s.name.as_str()).collect();
        let toolbox = granted.subset(&names).expect("refined tools come from the toolbox");
        let sequence = spec.strategy.sequence().map(|s| if toolbox.is_empty() { s.without_tools() } else { s.clone() });
        let roster = self.roster(spec);
        let templates = &self.ctx.resources.templates;
        let objective = spec
            .objective
            .clone()
            .unwrap_or_else(|| "Complete the task given in the user message.".into());
        let system = match &sequence {
            None => render_system(
                &templates.basic,
                &SystemPrompt {
                    persona: spec.persona.clone(),
                    objective,
                    ..SystemPrompt::default()
                },
            )?,
            Some(seq) => {
                let peers: Vec<(String, String)> = if seq.is_conversational() {
                    roster
                        .iter()
                        .map(|n| (n.clone(), self.spec(n).persona.clone()))
                        .collect()
                } else {
                    Vec::new()
                };
                render_system(
                    &templates.agent,
                    &SystemPrompt {
                        persona: spec.persona.clone(),
                        objective,
                        tools_block: tools_block(&refined),
                        agents_block: agents_block(&peers),
                        response_format: seq.response_format(),
                        termination_instruction: termination_instruction(
                            self.ctx.termination_literal,
                            spec.can_terminate(self.unit.topology),
                        ),
                    },
                )?
            }
        };
        let memory = ShortMemory::new(Message::system(system), Message::user(self.opening.clone()), self.unit.memory_capacity);
        self.agents.insert(
            name.to_string(),
            AgentState {
                memory,
                toolbox,
                sequence,
                roster,
            },
        );
        Ok(())
    }

    fn observe(&mut self, agent: &str, message: Message) {
        let origin = message.origin;
        let content = message.content.clone();
        self.agents.get_mut(agent).expect("agent state exists").memory.append(message);
        self.ctx.events.append(
            EventKind::ObservationAdded,
            json!({"task_id": self.task.id, "agent": agent, "origin": origin, "content": content}),
        );
    }

    fn deliver(&mut self, to: &str, from: &str, prefix: &str, payload: &str) -> Result<(), ExecError> {
        self.ensure_agent(to)?;
        let state = self.agents.get_mut(to).expect("just ensured");
        state.memory.append(Message::user(format!("{prefix} {from}:\n{payload}")));
        Ok(())
    }

    fn mark_last(&mut self, source: ObservationSource) {
        if let Some(step) = self.trace.steps.last_mut() {
            step.observation = Some(source);
        }
    }

    fn publish(&self, agent: &str) {
        let messages = self.agents[agent].memory.messages().to_vec();
        let mut board = self.ctx.transcripts.lock().expect("transcripts poisoned");
        board.entry(self.task.id.clone()).or_default().insert(agent.to_string(), messages);
    }

    fn step(&mut self, agent: &str, round: Option<usize>) -> Result<StepResult, ExecError> {
        self.ctx.control.wait_while_paused().map_err(|_| ExecError::Cancelled)?;
        let iteration = self.trace.steps.len();
        if iteration >= self.unit.max_iterations {
            return Err(ExecError::MaxIterations(self.unit.max_iterations));
        }
        self.ctx.events.append(
            EventKind::AgentSelected,
            json!({"task_id": self.task.id, "unit": self.unit.name, "agent": agent, "iteration": iteration}),
        );
        self.ensure_agent(agent)?;
        for content in self.ctx.feedback.drain_incidental(&self.task.id) {
            self.observe(agent, make_observation(&content, Origin::Human));
        }
        if self.agents[agent].memory.last().is_some_and(|m| m.role == Role::Assistant) {
            self.observe(agent, make_observation("", Origin::Framework));
        }
        let spec = self.spec(agent);
        let recorder = Recorder {
            inner: self.ctx.backend,
            events: self.ctx.events,
            control: Some(self.ctx.control),
            task_id: Some(&self.task.id),
            agent,
        };
        let literal = self.ctx.termination_literal;
        let state = self.agents.get_mut(agent).expect("ensured");
        let step_err = |source: StepError| ExecError::Step {
            agent: agent.to_string(),
            source,
        };
        let output = match &state.sequence {
            None => {
                let request = ChatRequest::new(state.memory.messages().to_vec(), &spec.params)
                    .map_err(|e| step_err(e.into()))?;
                let text = recorder.chat(&request).map_err(|e| step_err(e.into()))?.trim().to_string();
                state.memory.append(Message::assistant(text.clone()));
                StepOutput {
                    terminal: Some(detect_termination(&text, literal).unwrap_or(text)),
                    ..StepOutput::default()
                }
            }
            Some(seq) => {
                let cfg = StepConfig {
                    sequence: seq,
                    roster: &state.roster,
                    termination_literal: literal,
                    params: &spec.params,
                };
                step_iterative(&cfg, &mut state.memory, &recorder).map_err(step_err)?.output
            }
        };
        let mut observation = None;
        if let Some(call) = &output.action {
            let result = state.toolbox.invoke(call);
            self.ctx.events.append(
                EventKind::ToolInvoked,
                json!({"task_id": self.task.id, "agent": agent, "tool": call.tool_name, "arguments": call.arguments}),
            );
            self.observe(agent, make_observation(&result, Origin::ToolResult));
            observation = Some((call.clone(), result));
        }
        self.publish(agent);
        self.trace.steps.push(TraceStep {
            iteration,
            agent: agent.to_string(),
            is_lead: spec.is_lead,
            summary: StepSummary::of(&output),
            observation: observation.as_ref().map(|_| ObservationSource::Tool),
            round,
        });
        Ok(StepResult { output, observation })
    }

    /// `@HumanProxy`: blocks the task until answered or timed out.
    fn ask_human(&mut self, agent: &str, result: &StepResult) {
        let question = handoff_payload(&result.output, None);
        self.ctx.events.append(
            EventKind::HumanRequested,
            json!({"task_id": self.task.id, "agent": agent, "question": question}),
        );
        self.ctx.feedback.open_request(&self.task.id);
        match self.ctx.feedback.await_response(&self.task.id, self.ctx.human_timeout) {
            Some(answer) => {
                self.ctx.events.append(
                    EventKind::HumanResponded,
                    json!({"task_id": self.task.id, "agent": agent, "content": answer}),
                );
                self.observe(agent, make_observation(&answer, Origin::Human));
            }
            None => self.observe(agent, make_observation("", Origin::Framework)),
        }
        self.mark_last(ObservationSource::Human);
        self.publish(agent);
    }

    fn wants_human(result: &StepResult) -> bool {
        result.output.terminal.is_none() && result.output.next_agent == Some(AgentRef::HumanProxy)
    }

    fn finish(&mut self, agent: &str, text: &str) -> Result<String, ExecError> {
        self.trace.terminated_by = Some(agent.to_string());
        Ok(text.to_string())
    }

    fn run(&mut self) -> Result<String, ExecError> {
        match self.unit.topology {
            Topology::Independent => self.run_independent(),
            Topology::Sequential | Topology::Joint => self.run_matched(),
            Topology::Hierarchical => self.run_hierarchical(),
            Topology::Broadcast => self.run_broadcast(),
        }
    }

    fn first_agent(&self) -> Result<&'a AgentSpec, ExecError> {
        match select_agent(self.unit, 0, None, &self.task.description, self.embedder()) {
            Ok(a) => Ok(a),
            Err(MatchError::NoSelection) => Ok(&self.unit.agents[0]),
            Err(e) => Err(e.into()),
        }
    }

    fn run_independent(&mut self) -> Result<String, ExecError> {
        let agent = self.first_agent()?;
        loop {
            let r = self.step(&agent.name, None)?;
            if let Some(t) = &r.output.terminal {
                return self.finish(&agent.name, t);
            }
            if Self::wants_human(&r) {
                self.ask_human(&agent.name, &r);
            }
        }
    }

    fn run_matched(&mut self) -> Result<String, ExecError> {
        let mut previous: Option<(&'a AgentSpec, Option<AgentRef>, String)> = None;
        loop {
            let iteration = self.trace.steps.len();
            let agent = match &previous {
                None => self.first_agent()?,
                Some((prev, next, _)) => {
                    match select_agent(self.unit, iteration, Some((prev, next.as_ref())), &self.task.description, self.embedder()) {
                        Ok(a) => a,
                        Err(MatchError::NoSelection) => prev,
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            if let Some((prev, _, payload)) = &previous {
                if prev.name != agent.name {
                    self.deliver(&agent.name, &prev.name, "Message from", payload)?;
                    self.mark_last(ObservationSource::Handoff);
                }
            }
            let r = self.step(&agent.name, None)?;
            if let Some(t) = &r.output.terminal {
                if agent.can_terminate(self.unit.topology) {
                    return self.finish(&agent.name, t);
                }
            }
            let mut next = r.output.next_agent.clone();
            if Self::wants_human(&r) {
                self.ask_human(&agent.name, &r);
                next = Some(AgentRef::SelfRef);
            }
            previous = Some((agent, next, handoff_payload(&r.output, r.observation.as_ref())));
        }
    }

    fn lead(&self) -> Result<&'a AgentSpec, ExecError> {
        self.unit
            .lead()
            .ok_or_else(|| ExecError::Config(format!("unit '{}' has no lead", self.unit.name)))
    }

    /// One member turn answering the lead: exactly one step, then a report.
    fn member_turn(&mut self, member: &str, lead: &str, message: &str, round: Option<usize>) -> Result<String, ExecError> {
        self.deliver(member, lead, "Message from", message)?;
        let r = self.step(member, round)?;
        if Self::wants_human(&r) {
            self.ask_human(member, &r);
        }
        self.mark_last(ObservationSource::Report);
        Ok(handoff_payload(&r.output, r.observation.as_ref()))
    }

    fn run_hierarchical(&mut self) -> Result<String, ExecError> {
        let lead = self.lead()?;
        loop {
            let r = self.step(&lead.name, None)?;
            if let Some(t) = &r.output.terminal {
                return self.finish(&lead.name, t);
            }
            match &r.output.next_agent {
                Some(AgentRef::HumanProxy) => self.ask_human(&lead.name, &r),
                Some(next @ AgentRef::Named(_)) => {
                    let Selection::Agent(member) = match_mention(self.unit, next, lead)? else {
                        unreachable!("named mentions select agents")
                    };
                    if member.name != lead.name {
                        self.mark_last(ObservationSource::Handoff);
                        let message = handoff_payload(&r.output, r.observation.as_ref());
                        let report = self.member_turn(&member.name, &lead.name, &message, None)?;
                        self.deliver(&lead.name, &member.name, "Report from", &report)?;
                    }
                }
                _ => {}
            }
        }
    }

    fn run_broadcast(&mut self) -> Result<String, ExecError> {
        let lead = self.lead()?;
        let members: Vec<&'a AgentSpec> = self.unit.agents.iter().filter(|a| !a.is_lead).collect();
        let mut rounds = 0;
        loop {
            let r = self.step(&lead.name, None)?;
            if let Some(t) = &r.output.terminal {
                return self.finish(&lead.name, t);
            }
            if Self::wants_human(&r) {
                self.ask_human(&lead.name, &r);
                continue;
            }
            if r.observation.is_some() {
                continue;
            }
            rounds += 1;
            if rounds > self.unit.broadcast_rounds {
                return Err(ExecError::BroadcastRounds(self.unit.broadcast_rounds));
            }
            self.mark_last(ObservationSource::Handoff);
            let message = handoff_payload(&r.output, None);
            let mut replies = Vec::with_capacity(members.len());
            for member in &members {
                let report = self.member_turn(&member.name, &lead.name, &message, Some(rounds))?;
                replies.push(format!("Report from {}:\n{}", member.name, report));
            }
            let state = self.agents.get_mut(&lead.name).expect("lead stepped");
            state.memory.append(Message::user(replies.join("\n\n")));
        }
    }
}

fn opening_message(ctx: &ExecContext<'_>, task: &Task) -> Result<String, ExecError> {
    let mut text = format!(
        "Workflow instruction:\n{}\n\nYour task ({}):\n{}",
        ctx.instruction.trim(),
        task.id,
        task.description.trim()
    );
    if !task.dependency_results.is_empty() {
        text.push_str("\n\nResults of the tasks this task depends on:");
        for (id, result) in &task.dependency_results {
            text.push_str(&format!("\n\n## {id}\n{}", result.trim()));
        }
    }
    if ctx.episodic.enabled && ctx.episodic.k > 0 {
        let query_ctx = QueryContext {
            workflow_id: ctx.workflow_id.to_string(),
            direct_dependencies: task.depends_on.clone(),
        };
        let hits = ctx
            .resources
            .episodes
            .query(&task.description, ctx.resources.embedder.as_ref(), &ctx.episodic.scope, &query_ctx, ctx.episodic.k)
            .map_err(|e| ExecError::Memory(e.to_string()))?;
        if !hits.is_empty() {
            text.push_str("\n\nRelevant prior results:");
            for hit in hits {
                text.push_str(&format!(
                    "\n- {}\n  {}",
                    hit.episode.description.trim(),
                    truncate(hit.episode.result.trim(), ctx.episodic.max_chars)
                ));
            }
        }
    }
    Ok(text)
}

/// Runs `task` on `unit` to completion or failure, stores its episode, and
/// purges every agent's short memory.
pub fn execute_task(ctx: &ExecContext<'_>, unit: &AgentUnit, task: &Task) -> TaskOutcome {
    let mut run = Run {
        ctx,
        unit,
        task,
        opening: String::new(),
        agents: BTreeMap::new(),
        trace: ExecutionTrace {
            task_id: task.id.clone(),
            unit: unit.name.clone(),
            topology: unit.topology,
            steps: Vec::new(),
            terminated_by: None,
        },
    };
    let mut result = opening_message(ctx, task).and_then(|opening| {
        run.opening = opening;
        run.run()
    });
    let fatal = result.as_ref().err().is_some_and(ExecError::is_fatal);
    if !fatal {
        let (text, success) = match &result {
            Ok(t) => (t.clone(), true),
            Err(e) => (e.to_string(), false),
        };
        let draft = EpisodeDraft {
            workflow_id: ctx.workflow_id.to_string(),
            task_id: task.id.clone(),
            description: task.description.clone(),
            result: text,
            dependency_ids: task.depends_on.iter().cloned().collect(),
            success,
        };
        let stored = draft
            .embed(ctx.resources.embedder.as_ref())
            .map_err(|e| e.to_string())
            .and_then(|ep| ctx.resources.episodes.store(ep).map_err(|e| e.to_string()));
        if let Err(e) = stored {
            result = Err(ExecError::Memory(e));
        }
    }
    for (_, state) in std::mem::take(&mut run.agents) {
        state.memory.purge();
    }
    ctx.transcripts.lock().expect("transcripts poisoned").remove(&task.id);
    TaskOutcome {
        result,
        trace: run.trace,
    }
}
