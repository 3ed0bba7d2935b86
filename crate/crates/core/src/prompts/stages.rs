use std::fmt;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum StageLabel {
    Plan,
    Thought,
    TaskThought,
    DialogThought,
    Next,
    Action,
    Observation,
    Custom(String),
}

impl StageLabel {
    /// Header text as written by the model, before the colon.
    pub fn header(&self) -> &str {
        match self {
            StageLabel::Plan => "Plan",
            StageLabel::Thought => "Thought",
            StageLabel::TaskThought => "Task Thought",
            StageLabel::DialogThought => "Dialog Thought",
            StageLabel::Next => "Next",
            StageLabel::Action => "Action",
            StageLabel::Observation => "Observation",
            StageLabel::Custom(s) => s,
        }
    }

    /// Header spellings accepted when parsing, lowercase.
    pub(crate) fn header_variants(&self) -> Vec<String> {
        let h = self.header().to_lowercase();
        let squashed = h.replace(' ', "");
        if squashed == h {
            vec![h]
        } else {
            vec![h, squashed]
        }
    }

    pub fn is_model_produced(&self) -> bool {
        *self != StageLabel::Observation
    }

    fn describe(&self, conversational: bool) -> String {
        match self {
            StageLabel::Plan => "your step-by-step plan for the task, revised at every iteration".into(),
            StageLabel::Thought => "reflect on the task and decide the next step".into(),
            StageLabel::TaskThought => "reflect on the current task and the next step to solve it".into(),
            StageLabel::DialogThought => {
                "reflect on how the other agents can help; anything you want to tell the next agent goes here".into()
            }
            StageLabel::Next => "@Self to continue yourself, or @AgentName to hand the task to another agent".into(),
            StageLabel::Action if conversational => {
                "only when Next is @Self: a JSON object {\"tool\": \"<tool name>\", \"input\": {...}}".into()
            }
            StageLabel::Action => "a JSON object {\"tool\": \"<tool name>\", \"input\": {...}}".into(),
            StageLabel::Observation => "provided to you after each Action".into(),
            StageLabel::Custom(s) => format!("your {s} for this iteration"),
        }
    }
}

impl From<StageLabel> for String {
    fn from(l: StageLabel) -> String {
        l.header().to_string()
    }
}

impl From<String> for StageLabel {
    fn from(s: String) -> Self {
        StageLabel::parse(&s)
    }
}

impl StageLabel {
    pub fn parse(s: &str) -> Self {
        let norm = s.trim().to_lowercase().replace([' ', '_', '-'], "");
        match norm.as_str() {
            "plan" => StageLabel::Plan,
            "thought" => StageLabel::Thought,
            "taskthought" => StageLabel::TaskThought,
            "dialogthought" => StageLabel::DialogThought,
            "next" => StageLabel::Next,
            "action" => StageLabel::Action,
            "observation" => StageLabel::Observation,
            _ => StageLabel::Custom(s.trim().to_string()),
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

/// Ordered stages of one iteration of an iterative strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSequence {
    stages: Vec<StageLabel>,
    #[serde(default)]
    loop_from: usize,
}

impl StageSequence {
    pub fn new(stages: Vec<StageLabel>, loop_from: usize) -> Result<Self, PromptError> {
        if stages.is_empty() {
            return Err(PromptError::InvalidSequence("no stages".into()));
        }
        if loop_from >= stages.len() {
            return Err(PromptError::InvalidSequence(format!("loop_from {loop_from} out of range")));
        }
        if stages.iter().filter(|s| **s == StageLabel::Observation).count() > 1 {
            return Err(PromptError::InvalidSequence("more than one Observation per cycle".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            if let StageLabel::Custom(c) = s {
                if c.is_empty() || c.contains(':') || c.contains('\n') {
                    return Err(PromptError::InvalidSequence(format!("bad custom label {c:?}")));
                }
            }
            if stages[..i].contains(s) {
                return Err(PromptError::InvalidSequence(format!("duplicate stage {s}")));
            }
        }
        Ok(Self { stages, loop_from })
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self, PromptError> {
        Self::new(labels.iter().map(|l| StageLabel::parse(l.as_ref())).collect(), 0)
    }

    pub fn react() -> Self {
        Self::new(vec![StageLabel::Thought, StageLabel::Action, StageLabel::Observation], 0).expect("valid")
    }

    pub fn plan_react() -> Self {
        Self::new(
            vec![StageLabel::Plan, StageLabel::Thought, StageLabel::Action, StageLabel::Observation],
            0,
        )
        .expect("valid")
    }

    /// Plan, Task Thought, Dialog Thought, Next, Action, Observation. Action
    /// and Observation only happen when Next is `@Self`.
    pub fn conv_plan_react() -> Self {
        Self::new(
            vec![
                StageLabel::Plan,
                StageLabel::TaskThought,
                StageLabel::DialogThought,
                StageLabel::Next,
                StageLabel::Action,
                StageLabel::Observation,
            ],
            0,
        )
        .expect("valid")
    }

    /// Observe, Orient, Decide, Act. Labels only; Act is the tool Action.
    pub fn ooda() -> Self {
        Self::from_labels(&["Observe", "Orient", "Decide", "Action", "Observation"]).expect("valid")
    }

    /// Plan, Do, Check, Act. Labels only; Act is the tool Action.
    pub fn pdca() -> Self {
        Self::from_labels(&["Plan", "Do", "Check", "Action", "Observation"]).expect("valid")
    }

    pub fn stages(&self) -> &[StageLabel] {
        &self.stages
    }

    pub fn loop_from(&self) -> usize {
        self.loop_from
    }

    pub fn contains(&self, label: &StageLabel) -> bool {
        self.stages.contains(label)
    }

    pub fn is_conversational(&self) -> bool {
        self.contains(&StageLabel::Next)
    }

    pub fn model_stages(&self) -> impl Iterator<Item = &StageLabel> {
        self.stages.iter().filter(|s| s.is_model_produced())
    }

    /// The sequence minus Action and Observation, for agents left without
    /// tools. Unchanged if nothing else would remain.
    pub fn without_tools(&self) -> Self {
        let stages: Vec<StageLabel> = self
            .stages
            .iter()
            .filter(|s| !matches!(s, StageLabel::Action | StageLabel::Observation))
            .cloned()
            .collect();
        if stages.is_empty() {
            return self.clone();
        }
        Self { stages, loop_from: 0 }
    }

    /// Instructions describing the expected response layout.
    pub fn response_format(&self) -> String {
        let conversational = self.is_conversational();
        let mut out = String::from("Respond using these stages, each starting on its own line with its label:\n");
        for stage in self.model_stages() {
            out.push_str(&format!("{}: <{}>\n", stage.header(), stage.describe(conversational)));
        }
        if self.contains(&StageLabel::Observation) {
            out.push_str("Do not write the Observation stage yourself; it is returned to you after each Action.");
        }
        out.trim_end().to_string()
    }
}
