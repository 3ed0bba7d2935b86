use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{detect_termination, parse_action, parse_next_mention, parse_stages, render_action, AgentRef, MentionError};
use super::stages::{StageLabel, StageSequence};
use crate::backend::{BackendError, ChatBackend, ChatParams, ChatRequest};
use crate::memory::ShortMemory;
use crate::message::{Message, Origin, Role};
use crate::tools::ToolCall;

/// One parsed iteration of an iterative strategy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutput {
    pub stages: IndexMap<StageLabel, String>,
    pub action: Option<ToolCall>,
    pub next_agent: Option<AgentRef>,
    pub terminal: Option<String>,
}

impl StepOutput {
    pub fn stage(&self, label: &StageLabel) -> Option<&str> {
        self.stages.get(label).map(String::as_str)
    }

    /// Assistant message text in the normalized `Label: text` layout.
    pub fn render(&self, termination_literal: &str) -> String {
        let mut lines: Vec<String> = self.stages.iter().map(|(l, t)| format!("{}: {}", l.header(), t)).collect();
        if let Some(t) = &self.terminal {
            lines.push(format!("{termination_literal} {t}"));
        }
        lines.join("\n")
    }

    pub fn tags(&self) -> Vec<String> {
        self.stages.keys().map(|l| l.header().to_string()).collect()
    }
}

/// A problem with a model response that earns one corrective re-prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Defect {
    MissingStage(StageLabel),
    MalformedAction(String),
    Mention(MentionError),
}

impl Defect {
    fn class(&self) -> u8 {
        match self {
            Defect::MissingStage(_) => 0,
            Defect::MalformedAction(_) => 1,
            Defect::Mention(_) => 2,
        }
    }

    fn correction(&self, roster: &[String]) -> String {
        match self {
            Defect::MissingStage(label) => format!(
                "Your response is missing the '{}:' stage. Respond again in the required format, starting each stage on its own line with its label.",
                label.header()
            ),
            Defect::MalformedAction(msg) => format!(
                "The Action stage could not be parsed ({msg}). Write the Action as a JSON object {{\"tool\": \"<tool name>\", \"input\": {{...}}}} and respond again."
            ),
            Defect::Mention(e) => {
                let mut names = vec!["@Self".to_string()];
                names.extend(roster.iter().map(|n| format!("@{n}")));
                names.push("@HumanProxy".into());
                format!("{e}. The Next stage must name one of: {}. Respond again.", names.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("response is missing the '{0}' stage after a corrective re-prompt")]
    MissingStage(String),
    #[error("malformed Action after a corrective re-prompt: {0}")]
    MalformedAction(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Static inputs of one strategy step.
#[derive(Debug, Clone, Copy)]
pub struct StepConfig<'a> {
    pub sequence: &'a StageSequence,
    /// Agents reachable by `@name` (conversational strategies).
    pub roster: &'a [String],
    pub termination_literal: &'a str,
    pub params: &'a ChatParams,
}

/// Interprets one raw response. `mention_fallback` makes an unusable Next
/// stage resolve to `@Self` instead of a defect.
pub fn interpret(raw: &str, cfg: &StepConfig<'_>, mention_fallback: bool) -> Result<StepOutput, Defect> {
    let terminal = detect_termination(raw, cfg.termination_literal);
    let body = match raw.find(cfg.termination_literal) {
        Some(at) if !cfg.termination_literal.is_empty() => &raw[..at],
        _ => raw,
    };
    let mut stages = parse_stages(body, cfg.sequence);
    if let Some(terminal) = terminal {
        stages.shift_remove(&StageLabel::Action);
        return Ok(StepOutput {
            stages,
            action: None,
            next_agent: None,
            terminal: Some(terminal),
        });
    }
    for label in cfg.sequence.model_stages() {
        if *label == StageLabel::Action {
            continue;
        }
        if stages.get(label).is_none_or(|t| t.is_empty()) {
            return Err(Defect::MissingStage(label.clone()));
        }
    }
    let mut next_agent = None;
    let mut action_required = cfg.sequence.contains(&StageLabel::Action);
    if cfg.sequence.is_conversational() {
        let mention = match parse_next_mention(&stages[&StageLabel::Next], cfg.roster) {
            Ok(m) => m,
            Err(_) if mention_fallback => {
                stages.insert(StageLabel::Next, "@Self".into());
                action_required = false;
                AgentRef::SelfRef
            }
            Err(e) => return Err(Defect::Mention(e)),
        };
        if mention != AgentRef::SelfRef {
            action_required = false;
            stages.shift_remove(&StageLabel::Action);
        }
        next_agent = Some(mention);
    }
    let action = match stages.get(&StageLabel::Action) {
        Some(text) => {
            let call = parse_action(text).map_err(Defect::MalformedAction)?;
            stages.insert(StageLabel::Action, render_action(&call));
            Some(call)
        }
        None if action_required => return Err(Defect::MissingStage(StageLabel::Action)),
        None => None,
    };
    Ok(StepOutput {
        stages,
        action,
        next_agent,
        terminal: None,
    })
}

/// What a step produced, and how many model calls it took.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub output: StepOutput,
    pub model_calls: usize,
}

/// Runs one iteration: a chat call over `memory`, parsing, and at most one
/// corrective re-prompt per defect class. A second mention defect falls back
/// to `@Self`; any other repeated defect fails the step. On success the
/// normalized assistant message is appended to `memory`.
pub fn step_iterative(
    cfg: &StepConfig<'_>,
    memory: &mut ShortMemory,
    backend: &dyn ChatBackend,
) -> Result<StepOutcome, StepError> {
    let mut repaired: Vec<u8> = Vec::new();
    let mut calls = 0;
    loop {
        let request = ChatRequest::new(memory.messages().to_vec(), cfg.params)?;
        let raw = backend.chat(&request)?;
        calls += 1;
        let mention_fallback = repaired.contains(&Defect::Mention(MentionError::NoMention).class());
        match interpret(&raw, cfg, mention_fallback) {
            Ok(output) => {
                memory.append(
                    Message::new(Role::Assistant, output.render(cfg.termination_literal), Origin::Model)
                        .with_stage_tags(output.tags()),
                );
                return Ok(StepOutcome {
                    output,
                    model_calls: calls,
                });
            }
            Err(defect) if !repaired.contains(&defect.class()) => {
                repaired.push(defect.class());
                memory.append(Message::assistant(raw));
                memory.append(Message::user(defect.correction(cfg.roster)));
            }
            Err(Defect::MissingStage(label)) => return Err(StepError::MissingStage(label.header().into())),
            Err(Defect::MalformedAction(msg)) => return Err(StepError::MalformedAction(msg)),
            Err(Defect::Mention(_)) => unreachable!("mention defects fall back after one repair"),
        }
    }
}
