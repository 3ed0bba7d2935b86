//! Parsers for raw model output.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::stages::{StageLabel, StageSequence};
use crate::queue::TaskSpec;
use crate::tools::ToolCall;

pub const DEFAULT_TERMINATION: &str = "FINAL ANSWER:";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no JSON object found in the planner output")]
    NoJsonFound,
    #[error("plan does not match the expected format: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable verdict: {0:?}")]
pub struct UnparseableVerdict(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MentionError {
    #[error("unknown agent '@{0}'")]
    UnknownAgent(String),
    #[error("no @mention in the Next stage")]
    NoMention,
}

/// Where the conversation goes after a conversational step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AgentRef {
    SelfRef,
    Named(String),
    HumanProxy,
}

impl AgentRef {
    pub fn mention(&self) -> String {
        match self {
            AgentRef::SelfRef => "@Self".into(),
            AgentRef::Named(n) => format!("@{n}"),
            AgentRef::HumanProxy => "@HumanProxy".into(),
        }
    }
}

/// First JSON object embedded in `raw`, skipping prose and code fences.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    for (i, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn string_field(obj: &Map<String, Value>, key: &str, at: &str) -> Result<String, PlanError> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Some(Value::String(_)) => Err(PlanError::SchemaViolation(format!("{at}.{key} is empty"))),
        Some(_) => Err(PlanError::SchemaViolation(format!("{at}.{key} must be a string"))),
        None => Err(PlanError::SchemaViolation(format!("{at}.{key} is missing"))),
    }
}

/// Task specs from planner output of the form
/// `{"tasks": [{"id", "description", "depends_on", "unit_hint"}]}`.
pub fn parse_plan(raw: &str) -> Result<Vec<TaskSpec>, PlanError> {
    let obj = extract_json_object(raw).ok_or(PlanError::NoJsonFound)?;
    let tasks = match obj.get("tasks") {
        Some(Value::Array(tasks)) => tasks,
        Some(_) => return Err(PlanError::SchemaViolation("tasks must be an array".into())),
        None => return Err(PlanError::SchemaViolation("tasks is missing".into())),
    };
    if tasks.is_empty() {
        return Err(PlanError::SchemaViolation("tasks is empty".into()));
    }
    let mut specs = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let at = format!("tasks[{i}]");
        let Value::Object(task) = task else {
            return Err(PlanError::SchemaViolation(format!("{at} must be an object")));
        };
        let id = string_field(task, "id", &at)?;
        let description = string_field(task, "description", &at)?;
        let depends_on = match task.get("depends_on") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(deps)) => deps
                .iter()
                .map(|d| match d {
                    Value::String(s) => Ok(s.trim().to_string()),
                    _ => Err(PlanError::SchemaViolation(format!("{at}.depends_on must hold strings"))),
                })
                .collect::<Result<_, _>>()?,
            Some(_) => return Err(PlanError::SchemaViolation(format!("{at}.depends_on must be an array"))),
        };
        let unit_hint = match task.get("unit_hint") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) if s.trim().is_empty() => None,
            Some(Value::String(s)) => Some(s.trim().to_string()),
            Some(_) => return Err(PlanError::SchemaViolation(format!("{at}.unit_hint must be a string or null"))),
        };
        specs.push(TaskSpec {
            id,
            description,
            depends_on,
            unit_hint,
        });
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub passed: bool,
    pub reason: String,
}

/// Accepts `{"verdict": bool, "reason": ...}` or a bare `true`/`false`.
pub fn parse_verdict_detail(raw: &str) -> Result<Verdict, UnparseableVerdict> {
    if let Some(obj) = extract_json_object(raw) {
        if let Some(Value::Bool(passed)) = obj.get("verdict") {
            let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
            return Ok(Verdict { passed: *passed, reason });
        }
    }
    let token = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '.' | '!'))
        .to_ascii_lowercase();
    match token.as_str() {
        "true" => Ok(Verdict { passed: true, reason: String::new() }),
        "false" => Ok(Verdict { passed: false, reason: String::new() }),
        _ => Err(UnparseableVerdict(raw.trim().to_string())),
    }
}

pub fn parse_verdict(raw: &str) -> Result<bool, UnparseableVerdict> {
    parse_verdict_detail(raw).map(|v| v.passed)
}

/// Text after the first occurrence of `literal`, trimmed.
pub fn detect_termination(raw: &str, literal: &str) -> Option<String> {
    if literal.is_empty() {
        return None;
    }
    raw.find(literal).map(|at| raw[at + literal.len()..].trim().to_string())
}

/// First `@name` token in `stage_text`. `@Self` and `@HumanProxy` are
/// reserved; other names are matched case-insensitively against `roster` and
/// returned in their roster spelling.
pub fn parse_next_mention<S: AsRef<str>>(stage_text: &str, roster: &[S]) -> Result<AgentRef, MentionError> {
    let at = stage_text.find('@').ok_or(MentionError::NoMention)?;
    let name: String = stage_text[at + 1..]
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_' || *c == '-')
        .collect();
    if name.is_empty() {
        return Err(MentionError::NoMention);
    }
    if name.eq_ignore_ascii_case("self") {
        return Ok(AgentRef::SelfRef);
    }
    if name.eq_ignore_ascii_case("humanproxy") {
        return Ok(AgentRef::HumanProxy);
    }
    roster
        .iter()
        .map(AsRef::as_ref)
        .find(|r| r.eq_ignore_ascii_case(&name))
        .map(|r| AgentRef::Named(r.to_string()))
        .ok_or(MentionError::UnknownAgent(name))
}

/// Splits `raw` into stages by line-anchored, case-insensitive `Label:`
/// headers of `sequence`. Parsing stops at a model-written `Observation:` or
/// at a header repeated within the same response.
pub fn parse_stages(raw: &str, sequence: &StageSequence) -> IndexMap<StageLabel, String> {
    let headers: Vec<(StageLabel, Vec<String>)> = sequence
        .stages()
        .iter()
        .map(|s| (s.clone(), s.header_variants()))
        .collect();
    let mut out: IndexMap<StageLabel, String> = IndexMap::new();
    let mut current: Option<(StageLabel, Vec<&str>)> = None;
    let flush = |out: &mut IndexMap<StageLabel, String>, current: Option<(StageLabel, Vec<&str>)>| {
        if let Some((label, lines)) = current {
            out.insert(label, lines.join("\n").trim().to_string());
        }
    };
    for line in raw.lines() {
        match match_header(line, &headers) {
            Some((label, rest)) => {
                if label == StageLabel::Observation
                    || out.contains_key(&label)
                    || current.as_ref().is_some_and(|(l, _)| *l == label)
                {
                    break;
                }
                flush(&mut out, current.take());
                current = Some((label, vec![rest]));
            }
            None => {
                if let Some((_, lines)) = current.as_mut() {
                    lines.push(line);
                }
            }
        }
    }
    flush(&mut out, current);
    out
}

fn match_header<'a>(line: &'a str, headers: &[(StageLabel, Vec<String>)]) -> Option<(StageLabel, &'a str)> {
    let trimmed = line.trim_start();
    let lower = trimmed.to_lowercase();
    // Longest header first so "Task Thought" is not read as "Thought" text.
    let mut best: Option<(usize, &StageLabel)> = None;
    for (label, variants) in headers {
        for v in variants {
            if lower.starts_with(v.as_str())
                && lower[v.len()..].trim_start().starts_with(':')
                && best.is_none_or(|(len, _)| v.len() > len)
            {
                best = Some((v.len(), label));
            }
        }
    }
    let (len, label) = best?;
    // Lowercasing can change byte lengths outside ASCII; headers are ASCII so
    // the prefix length carries over whenever the prefix itself is ASCII.
    if !trimmed.is_char_boundary(len) || !trimmed[..len].is_ascii() {
        return None;
    }
    let after = trimmed[len..].trim_start();
    Some((label.clone(), after[1..].trim()))
}

/// Reads an Action body as `{"tool": name, "input": {...}}`.
pub fn parse_action(text: &str) -> Result<ToolCall, String> {
    let obj = extract_json_object(text).ok_or_else(|| "no JSON object found".to_string())?;
    let tool_name = match obj.get("tool") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => return Err("field \"tool\" must be a non-empty string".into()),
    };
    let arguments = match obj.get("input").or_else(|| obj.get("arguments")) {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err("field \"input\" must be a JSON object".into()),
    };
    Ok(ToolCall { tool_name, arguments })
}

/// Canonical Action text for a call.
pub fn render_action(call: &ToolCall) -> String {
    serde_json::json!({"tool": call.tool_name, "input": call.arguments}).to_string()
}
