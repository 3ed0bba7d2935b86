use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;

/// Plain text with `{variable}` placeholders. Braces not enclosing an
/// identifier (JSON examples, for instance) are left alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

/// Byte ranges of `{ident}` placeholders, with the identifier.
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_' || bytes[j].is_ascii_digit()) {
                j += 1;
            }
            if j > start && j < bytes.len() && bytes[j] == b'}' && bytes[start].is_ascii_lowercase() {
                out.push((i, j + 1, &body[start..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    pub fn new(name: &str, body: &str) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn variables(&self) -> Vec<String> {
        let mut names: Vec<String> = placeholders(&self.body).into_iter().map(|(_, _, n)| n.to_string()).collect();
        names.dedup();
        names
    }

    /// Substitutes every placeholder in one pass (values are not rescanned),
    /// then collapses runs of blank lines left by empty sections.
    pub fn render(&self, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for (start, end, name) in placeholders(&self.body) {
            let value = vars.get(name).ok_or_else(|| PromptError::UnboundVariable {
                template: self.name.clone(),
                variable: name.to_string(),
            })?;
            out.push_str(&self.body[last..start]);
            out.push_str(value);
            last = end;
        }
        out.push_str(&self.body[last..]);
        Ok(collapse_blank_lines(&out))
    }
}

fn collapse_blank_lines(text: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for line in text.lines() {
        let blank = line.trim().is_empty();
        if blank && out.last().is_none_or(|l| l.trim().is_empty()) {
            continue;
        }
        out.push(if blank { "" } else { line.trim_end() });
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// The templates each agent role renders its system message from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub agent: PromptTemplate,
    pub basic: PromptTemplate,
    pub planner: PromptTemplate,
    pub verifier: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            agent: PromptTemplate::new("agent", include_str!("../../templates/agent.txt")),
            basic: PromptTemplate::new("basic", include_str!("../../templates/basic.txt")),
            planner: PromptTemplate::new("planner", include_str!("../../templates/planner.txt")),
            verifier: PromptTemplate::new("verifier", include_str!("../../templates/verifier.txt")),
        }
    }
}

impl TemplateSet {
    /// Defaults, overridden by any of `agent.txt`, `basic.txt`,
    /// `planner.txt`, `verifier.txt` found in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for template in [&mut set.agent, &mut set.basic, &mut set.planner, &mut set.verifier] {
            let path = dir.join(format!("{}.txt", template.name));
            if path.exists() {
                template.body = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }
}
