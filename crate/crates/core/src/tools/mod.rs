//! Self-describing tools, the toolbox, and toolbox refinement.
//!
//! Tools are presented to the model purely through the schema text rendered
//! by [`tool_schema`]; no provider function-calling API is involved. Every
//! failure while invoking a tool comes back as an `Error: ...` observation so
//! the agent can correct itself.

mod builtin;
mod corpus;
mod refine;

pub use builtin::{CodeExecutionTool, FileIoTool, SemanticSearchTool, WebSearchTool, ScriptedOutput};
pub use corpus::{Chunk, CorpusIndex};
pub use refine::{refine, CategoryNode, RefinerConfig, RefinerKind};

use std::fmt;
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_OUTPUT_LIMIT: usize = 4000;
pub const TRUNCATION_MARKER: &str = " [truncated]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Int,
    Real,
    Bool,
    List,
    Object,
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamType::String => "string",
            ParamType::Int => "int",
            ParamType::Real => "real",
            ParamType::Bool => "bool",
            ParamType::List => "list",
            ParamType::Object => "object",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub required: bool,
    pub doc: String,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamType, doc: &str) -> Self {
        Self { name: name.into(), kind, required: true, doc: doc.into() }
    }

    pub fn optional(name: &str, kind: ParamType, doc: &str) -> Self {
        Self { name: name.into(), kind, required: false, doc: doc.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: Vec<ParamSpec>,
    pub output_doc: String,
    #[serde(default)]
    pub category_path: Vec<String>,
}

/// Schema block injected into system prompts.
pub fn tool_schema(spec: &ToolSpec) -> String {
    let mut out = format!("Tool: {}\nDescription: {}\nInput:\n", spec.name, spec.description);
    if spec.input_schema.is_empty() {
        out.push_str("  (no parameters)\n");
    }
    for p in &spec.input_schema {
        let req = if p.required { "required" } else { "optional" };
        out.push_str(&format!("  {} ({}, {}): {}\n", p.name, p.kind, req, p.doc));
    }
    out.push_str(&format!("Output: {}", spec.output_doc));
    out
}

/// Renders the whole tools section of a system prompt; empty when there are
/// no tools.
pub fn tools_block(specs: &[ToolSpec]) -> String {
    if specs.is_empty() {
        return String::new();
    }
    let blocks: Vec<String> = specs.iter().map(tool_schema).collect();
    format!(
        "Available tools:\n\n{}\n\nTo use a tool, write the Action stage as a JSON object: \
         {{\"tool\": \"<tool name>\", \"input\": {{<parameters>}}}}",
        blocks.join("\n\n")
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Failed(String),
}

pub trait ToolHandler: Send + Sync {
    fn call(&self, args: &Map<String, Value>) -> Result<String, ToolError>;
}

impl<F> ToolHandler for F
where
    F: Fn(&Map<String, Value>) -> Result<String, ToolError> + Send + Sync,
{
    fn call(&self, args: &Map<String, Value>) -> Result<String, ToolError> {
        self(args)
    }
}

/// A spec plus the function that runs it.
#[derive(Clone)]
pub struct Tool {
    pub spec: ToolSpec,
    handler: Arc<dyn ToolHandler>,
    exclusive: Option<Arc<Mutex<()>>>,
}

impl fmt::Debug for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tool")
            .field("spec", &self.spec)
            .field("exclusive", &self.exclusive.is_some())
            .finish()
    }
}

impl Tool {
    pub fn new(spec: ToolSpec, handler: impl ToolHandler + 'static) -> Self {
        Self {
            spec,
            handler: Arc::new(handler),
            exclusive: None,
        }
    }

    pub fn from_arc(spec: ToolSpec, handler: Arc<dyn ToolHandler>) -> Self {
        Self { spec, handler, exclusive: None }
    }

    /// Serializes every invocation of this tool behind one lock.
    pub fn exclusive(mut self) -> Self {
        self.exclusive = Some(Arc::new(Mutex::new(())));
        self
    }

    fn run(&self, args: &Map<String, Value>) -> Result<String, ToolError> {
        match &self.exclusive {
            Some(lock) => {
                let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                self.handler.call(args)
            }
            None => self.handler.call(args),
        }
    }
}

/// The model-issued request to run a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolboxError {
    #[error("duplicate tool name '{0}'")]
    DuplicateTool(String),
    #[error("tool '{tool}' has category path {path:?} which is not in the hierarchy")]
    UnknownCategory { tool: String, path: Vec<String> },
    #[error("tool '{tool}' parameter '{param}' is required but undocumented")]
    UndocumentedParam { tool: String, param: String },
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
}

#[derive(Debug, Clone)]
pub struct Toolbox {
    tools: IndexMap<String, Tool>,
    hierarchy: CategoryNode,
    output_limit: usize,
}

impl Default for Toolbox {
    fn default() -> Self {
        Self {
            tools: IndexMap::new(),
            hierarchy: CategoryNode::root(),
            output_limit: DEFAULT_OUTPUT_LIMIT,
        }
    }
}

impl Toolbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_hierarchy(hierarchy: CategoryNode) -> Self {
        Self { hierarchy, ..Self::default() }
    }

    pub fn with_output_limit(mut self, limit: usize) -> Self {
        self.output_limit = limit;
        self
    }

    pub fn register(&mut self, tool: Tool) -> Result<(), ToolboxError> {
        let spec = &tool.spec;
        if self.tools.contains_key(&spec.name) {
            return Err(ToolboxError::DuplicateTool(spec.name.clone()));
        }
        if let Some(p) = spec.input_schema.iter().find(|p| p.required && p.doc.trim().is_empty()) {
            return Err(ToolboxError::UndocumentedParam { tool: spec.name.clone(), param: p.name.clone() });
        }
        if !spec.category_path.is_empty() && self.hierarchy.find(&spec.category_path).is_none() {
            return Err(ToolboxError::UnknownCategory {
                tool: spec.name.clone(),
                path: spec.category_path.clone(),
            });
        }
        self.tools.insert(spec.name.clone(), tool);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn hierarchy(&self) -> &CategoryNode {
        &self.hierarchy
    }

    pub fn get(&self, name: &str) -> Option<&Tool> {
        self.tools.get(name)
    }

    /// Specs in registration order.
    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.values().map(|t| t.spec.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    /// A toolbox holding only `names`, in the given order. Shares handlers.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Toolbox, ToolboxError> {
        let mut out = Toolbox {
            tools: IndexMap::new(),
            hierarchy: self.hierarchy.clone(),
            output_limit: self.output_limit,
        };
        for name in names {
            let name = name.as_ref();
            let tool = self.tools.get(name).ok_or_else(|| ToolboxError::UnknownTool(name.to_string()))?;
            out.tools.insert(name.to_string(), tool.clone());
        }
        Ok(out)
    }

    /// Validates, runs, and serializes one call. Never fails: every problem
    /// becomes an `Error: ...` observation.
    pub fn invoke(&self, call: &ToolCall) -> String {
        let Some(tool) = self.tools.get(&call.tool_name) else {
            let available = self.tools.keys().cloned().collect::<Vec<_>>().join(", ");
            return format!("Error: unknown tool '{}'; available: {}", call.tool_name, available);
        };
        let args = match validate_arguments(&tool.spec, &call.arguments) {
            Ok(args) => args,
            Err(msg) => return format!("Error: {msg}"),
        };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| tool.run(&args)));
        let text = match outcome {
            Ok(Ok(text)) => text,
            Ok(Err(ToolError::InvalidArgument(msg))) => return format!("Error: invalid argument: {msg}"),
            Ok(Err(ToolError::Failed(msg))) => return format!("Error: tool '{}' failed: {msg}", call.tool_name),
            Err(_) => return format!("Error: tool '{}' failed: handler panicked", call.tool_name),
        };
        truncate(&text, self.output_limit)
    }
}

pub fn truncate(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_string();
    }
    let mut out: String = text.chars().take(limit).collect();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Checks required parameters and coerces values to their declared types.
/// Unknown extra parameters pass through untouched.
fn validate_arguments(spec: &ToolSpec, args: &Map<String, Value>) -> Result<Map<String, Value>, String> {
    let mut out = args.clone();
    for p in &spec.input_schema {
        match args.get(&p.name) {
            None | Some(Value::Null) => {
                if p.required {
                    return Err(format!("missing required parameter '{}'", p.name));
                }
                out.remove(&p.name);
            }
            Some(v) => {
                let coerced = coerce(v, p.kind)
                    .ok_or_else(|| format!("parameter '{}' expects {}, got {}", p.name, p.kind, v))?;
                out.insert(p.name.clone(), coerced);
            }
        }
    }
    Ok(out)
}

fn coerce(v: &Value, kind: ParamType) -> Option<Value> {
    match kind {
        ParamType::String => match v {
            Value::String(_) => Some(v.clone()),
            Value::Number(n) => Some(Value::String(n.to_string())),
            Value::Bool(b) => Some(Value::String(b.to_string())),
            _ => None,
        },
        ParamType::Int => match v {
            Value::Number(n) if n.is_i64() || n.is_u64() => Some(v.clone()),
            Value::Number(n) => n.as_f64().filter(|f| f.fract() == 0.0).map(|f| Value::from(f as i64)),
            Value::String(s) => s.trim().parse::<i64>().ok().map(Value::from),
            _ => None,
        },
        ParamType::Real => match v {
            Value::Number(_) => Some(v.clone()),
            Value::String(s) => s.trim().parse::<f64>().ok().map(Value::from),
            _ => None,
        },
        ParamType::Bool => match v {
            Value::Bool(_) => Some(v.clone()),
            Value::String(s) => match s.trim().to_ascii_lowercase().as_str() {
                "true" => Some(Value::Bool(true)),
                "false" => Some(Value::Bool(false)),
                _ => None,
            },
            _ => None,
        },
        ParamType::List => v.is_array().then(|| v.clone()),
        ParamType::Object => v.is_object().then(|| v.clone()),
    }
}
