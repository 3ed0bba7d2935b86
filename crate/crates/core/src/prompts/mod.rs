//! Prompt strategies: system-message templates, the non-iterative one-off
//! call, iterative stage sequences, and the parsers for model output.

mod parse;
mod stages;
mod step;
mod template;

pub use parse::{
    detect_termination, extract_json_object, parse_action, parse_next_mention, parse_plan, parse_stages,
    parse_verdict, parse_verdict_detail, render_action, AgentRef, MentionError, PlanError, UnparseableVerdict,
    Verdict, DEFAULT_TERMINATION,
};
pub use stages::{StageLabel, StageSequence};
pub use step::{interpret, step_iterative, Defect, StepConfig, StepError, StepOutcome, StepOutput};
pub use template::{PromptTemplate, TemplateSet};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatParams, ChatRequest};
use crate::message::{Message, Origin, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template '{template}' references unbound variable '{variable}'")]
    UnboundVariable { template: String, variable: String },
    #[error("invalid stage sequence: {0}")]
    InvalidSequence(String),
}

/// Values substituted into an agent's system template.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SystemPrompt {
    pub persona: String,
    pub objective: String,
    pub tools_block: String,
    pub agents_block: String,
    pub response_format: String,
    pub termination_instruction: String,
}

pub fn render_system(template: &PromptTemplate, parts: &SystemPrompt) -> Result<String, PromptError> {
    let vars = BTreeMap::from([
        ("persona", parts.persona.clone()),
        ("objective", parts.objective.clone()),
        ("tools_block", parts.tools_block.clone()),
        ("agents_block", parts.agents_block.clone()),
        ("response_format", parts.response_format.clone()),
        ("termination_instruction", parts.termination_instruction.clone()),
    ]);
    template.render(&vars)
}

pub fn termination_instruction(literal: &str, may_terminate: bool) -> String {
    if may_terminate {
        format!(
            "When the task is complete, write \"{literal}\" followed by the complete final result. Write nothing after it."
        )
    } else {
        format!(
            "You may not finish the task yourself. When your part is done, write \"{literal}\" followed by your report; it is passed back to the agent that asked you."
        )
    }
}

/// Roster section for conversational agents.
pub fn agents_block(peers: &[(String, String)]) -> String {
    if peers.is_empty() {
        return String::new();
    }
    let mut out = String::from("Agents you can hand the conversation to:\n");
    for (name, description) in peers {
        let summary = description.lines().next().unwrap_or_default().trim();
        out.push_str(&format!("- @{name}: {summary}\n"));
    }
    out.push_str("Use @Self to continue working yourself, or @HumanProxy to ask the human supervising the workflow.");
    out
}

/// One-off call: system message plus instruction, trimmed response.
pub fn run_basic(
    system: &str,
    instruction: &str,
    params: &ChatParams,
    backend: &dyn ChatBackend,
) -> Result<String, BackendError> {
    let request = ChatRequest::new(vec![Message::system(system), Message::user(instruction)], params)?;
    Ok(backend.chat(&request)?.trim().to_string())
}

/// Observation-position user message. Empty results read "Continue".
pub fn make_observation(result: &str, origin: Origin) -> Message {
    let body = if result.trim().is_empty() { "Continue" } else { result };
    Message::new(Role::User, format!("Observation: {body}"), origin)
}
