//! Agents, Agent Units, matchers, and the per-task executor.

mod executor;
mod matcher;

pub use executor::{
    execute_task, handoff_payload, EpisodicSettings, ExecContext, ExecError, ExecutionTrace, ObservationSource,
    Recorder, Resources, StepSummary, TaskOutcome, TraceStep, Transcripts,
};
pub use matcher::{
    match_iterative, match_mention, match_semantic, match_unit, rank_agents, rank_units, select_agent, MatchError,
    Selection,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ChatParams;
use crate::prompts::StageSequence;
use crate::tools::RefinerConfig;

/// How an agent prompts the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StrategyDef", into = "StrategyDef")]
pub enum Strategy {
    /// One call; the reply is the agent's final output.
    Basic,
    Iterative(StageSequence),
}

impl Strategy {
    pub fn react() -> Self {
        Strategy::Iterative(StageSequence::react())
    }

    pub fn plan_react() -> Self {
        Strategy::Iterative(StageSequence::plan_react())
    }

    pub fn conv_plan_react() -> Self {
        Strategy::Iterative(StageSequence::conv_plan_react())
    }

    pub fn programmable<S: AsRef<str>>(labels: &[S]) -> Result<Self, crate::prompts::PromptError> {
        Ok(Strategy::Iterative(StageSequence::from_labels(labels)?))
    }

    pub fn sequence(&self) -> Option<&StageSequence> {
        match self {
            Strategy::Basic => None,
            Strategy::Iterative(s) => Some(s),
        }
    }

    pub fn is_conversational(&self) -> bool {
        self.sequence().is_some_and(StageSequence::is_conversational)
    }
}

/// Config spelling: a preset name, or `{ stages = [...] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum StrategyDef {
    Named(String),
    Programmable { stages: Vec<String> },
}

impl TryFrom<StrategyDef> for Strategy {
    type Error = String;

    fn try_from(def: StrategyDef) -> Result<Self, String> {
        match def {
            StrategyDef::Named(name) => match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
                "basic" => Ok(Strategy::Basic),
                "react" => Ok(Strategy::react()),
                "plan_react" | "planreact" => Ok(Strategy::plan_react()),
                "conv_plan_react" | "convplanreact" => Ok(Strategy::conv_plan_react()),
                "ooda" => Ok(Strategy::Iterative(StageSequence::ooda())),
                "pdca" => Ok(Strategy::Iterative(StageSequence::pdca())),
                other => Err(format!("unknown strategy '{other}'")),
            },
            StrategyDef::Programmable { stages } => Strategy::programmable(&stages).map_err(|e| e.to_string()),
        }
    }
}

impl From<Strategy> for StrategyDef {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Basic => StrategyDef::Named("basic".into()),
            Strategy::Iterative(seq) => StrategyDef::Programmable {
                stages: seq.stages().iter().map(|l| l.header().to_string()).collect(),
            },
        }
    }
}

fn default_strategy() -> Strategy {
    Strategy::react()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub persona: String,
    #[serde(default)]
    pub objective: Option<String>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Names of workflow tools this agent may use.
    #[serde(default)]
    pub tools: Vec<String>,
    #[serde(default)]
    pub refiner: RefinerConfig,
    #[serde(default)]
    pub params: ChatParams,
    /// Defaults to true, except for non-leads of lead-driven units.
    #[serde(default)]
    pub may_terminate: Option<bool>,
    #[serde(default)]
    pub is_lead: bool,
}

impl AgentSpec {
    pub fn new(name: &str, persona: &str) -> Self {
        Self {
            name: name.into(),
            persona: persona.into(),
            objective: None,
            strategy: default_strategy(),
            tools: Vec::new(),
            refiner: RefinerConfig::default(),
            params: ChatParams::executor(),
            may_terminate: None,
            is_lead: false,
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_tools<S: Into<String>>(mut self, tools: impl IntoIterator<Item = S>) -> Self {
        self.tools = tools.into_iter().map(Into::into).collect();
        self
    }

    pub fn lead(mut self) -> Self {
        self.is_lead = true;
        self
    }

    pub fn terminating(mut self, may: bool) -> Self {
        self.may_terminate = Some(may);
        self
    }

    pub fn can_terminate(&self, topology: Topology) -> bool {
        self.may_terminate.unwrap_or(!topology.lead_driven() || self.is_lead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Independent,
    Sequential,
    Joint,
    Hierarchical,
    Broadcast,
}

impl Topology {
    pub fn lead_driven(self) -> bool {
        matches!(self, Topology::Hierarchical | Topology::Broadcast)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherKind {
    Iterative,
    Semantic,
    Mention,
    Composite,
}

/// Agent selection policy. `Composite` tries `components` in order and takes
/// the first that yields an agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "MatcherDef", into = "MatcherDef")]
pub struct MatcherConfig {
    pub kind: MatcherKind,
    pub components: Vec<MatcherKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatcherDef {
    Kind(MatcherKind),
    Full {
        kind: MatcherKind,
        #[serde(default)]
        components: Vec<MatcherKind>,
    },
}

impl From<MatcherDef> for MatcherConfig {
    fn from(def: MatcherDef) -> Self {
        match def {
            MatcherDef::Kind(kind) => MatcherConfig::new(kind),
            MatcherDef::Full { kind, components } => MatcherConfig { kind, components },
        }
    }
}

impl From<MatcherConfig> for MatcherDef {
    fn from(m: MatcherConfig) -> Self {
        if m.components.is_empty() {
            MatcherDef::Kind(m.kind)
        } else {
            MatcherDef::Full {
                kind: m.kind,
                components: m.components,
            }
        }
    }
}

impl MatcherConfig {
    pub fn new(kind: MatcherKind) -> Self {
        Self {
            kind,
            components: Vec::new(),
        }
    }

    pub fn composite(components: Vec<MatcherKind>) -> Self {
        Self {
            kind: MatcherKind::Composite,
            components,
        }
    }

    /// The fallback chain this config stands for.
    pub fn chain(&self) -> Vec<MatcherKind> {
        match self.kind {
            MatcherKind::Composite => self.components.clone(),
            k => vec![k],
        }
    }

    pub fn default_for(topology: Topology) -> Self {
        match topology {
            Topology::Independent => MatcherConfig::new(MatcherKind::Semantic),
            Topology::Sequential => MatcherConfig::new(MatcherKind::Iterative),
            Topology::Joint => MatcherConfig::composite(vec![MatcherKind::Mention, MatcherKind::Semantic]),
            Topology::Hierarchical | Topology::Broadcast => MatcherConfig::new(MatcherKind::Mention),
        }
    }
}

fn default_max_iterations() -> usize {
    12
}

fn default_broadcast_rounds() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentUnit {
    pub name: String,
    pub topology: Topology,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub matcher: Option<MatcherConfig>,
    /// Agent order for the iterative matcher; defaults to `agents` order.
    #[serde(default)]
    pub sequence: Vec<String>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_broadcast_rounds")]
    pub broadcast_rounds: usize,
    /// Short-memory capacity per agent.
    #[serde(default)]
    pub memory_capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitError {
    #[error("unit '{0}' has no agents")]
    NoAgents(String),
    #[error("unit '{unit}' has duplicate agent '{agent}'")]
    DuplicateAgent { unit: String, agent: String },
    #[error("unit '{unit}' sequence names unknown agent '{agent}'")]
    UnknownSequenceAgent { unit: String, agent: String },
    #[error("unit '{unit}' needs exactly one lead, found {found}")]
    LeadCount { unit: String, found: usize },
    #[error("unit '{unit}': only the lead may terminate, but '{agent}' is allowed to")]
    NonLeadTerminates { unit: String, agent: String },
    #[error("unit '{unit}': agent '{agent}' must be allowed to terminate")]
    MustTerminate { unit: String, agent: String },
    #[error("unit '{unit}': {reason}")]
    Invalid { unit: String, reason: String },
}

impl AgentUnit {
    pub fn new(name: &str, topology: Topology, agents: Vec<AgentSpec>) -> Self {
        Self {
            name: name.into(),
            topology,
            agents,
            matcher: None,
            sequence: Vec::new(),
            max_iterations: default_max_iterations(),
            broadcast_rounds: default_broadcast_rounds(),
            memory_capacity: None,
        }
    }

    pub fn with_sequence<S: Into<String>>(mut self, seq: impl IntoIterator<Item = S>) -> Self {
        self.sequence = seq.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_matcher(mut self, matcher: MatcherConfig) -> Self {
        self.matcher = Some(matcher);
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn matcher(&self) -> MatcherConfig {
        self.matcher.clone().unwrap_or_else(|| MatcherConfig::default_for(self.topology))
    }

    /// Configured sequence, or the agents in order.
    pub fn effective_sequence(&self) -> Vec<String> {
        if self.sequence.is_empty() {
            self.agents.iter().map(|a| a.name.clone()).collect()
        } else {
            self.sequence.clone()
        }
    }

    pub fn agent(&self, name: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn lead(&self) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.is_lead)
    }

    /// Concatenated personas; what unit matching compares a task against.
    pub fn description(&self) -> String {
        self.agents.iter().map(|a| a.persona.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn validate(&self) -> Result<(), UnitError> {
        let unit = || self.name.clone();
        if self.agents.is_empty() {
            return Err(UnitError::NoAgents(unit()));
        }
        let mut seen = BTreeSet::new();
        for a in &self.agents {
            if a.name.trim().is_empty() || a.name.contains(char::is_whitespace) {
                return Err(UnitError::Invalid {
                    unit: unit(),
                    reason: format!("agent name {:?} must be a single non-empty word", a.name),
                });
            }
            if !seen.insert(a.name.to_ascii_lowercase()) {
                return Err(UnitError::DuplicateAgent { unit: unit(), agent: a.name.clone() });
            }
            if ["self", "humanproxy"].contains(&a.name.to_ascii_lowercase().as_str()) {
                return Err(UnitError::Invalid {
                    unit: unit(),
                    reason: format!("agent name '{}' is reserved", a.name),
                });
            }
        }
        if let Some(missing) = self.sequence.iter().find(|s| self.agent(s).is_none()) {
            return Err(UnitError::UnknownSequenceAgent { unit: unit(), agent: missing.clone() });
        }
        if self.max_iterations == 0 {
            return Err(UnitError::Invalid { unit: unit(), reason: "max_iterations must be positive".into() });
        }
        if let Some(m) = &self.matcher {
            if m.kind == MatcherKind::Composite && m.components.is_empty() {
                return Err(UnitError::Invalid { unit: unit(), reason: "composite matcher has no components".into() });
            }
        }
        let leads = self.agents.iter().filter(|a| a.is_lead).count();
        if self.topology.lead_driven() {
            if leads != 1 {
                return Err(UnitError::LeadCount { unit: unit(), found: leads });
            }
            if let Some(a) = self.agents.iter().find(|a| !a.is_lead && a.can_terminate(self.topology)) {
                return Err(UnitError::NonLeadTerminates { unit: unit(), agent: a.name.clone() });
            }
            if self.agents.len() < 2 {
                return Err(UnitError::Invalid { unit: unit(), reason: "a lead-driven unit needs members".into() });
            }
        }
        match self.topology {
            Topology::Independent | Topology::Hierarchical | Topology::Broadcast => {
                let must: Vec<&AgentSpec> = match self.topology {
                    Topology::Independent => self.agents.iter().collect(),
                    _ => self.lead().into_iter().collect(),
                };
                if let Some(a) = must.into_iter().find(|a| !a.can_terminate(self.topology)) {
                    return Err(UnitError::MustTerminate { unit: unit(), agent: a.name.clone() });
                }
            }
            Topology::Sequential | Topology::Joint => {
                if !self.agents.iter().any(|a| a.can_terminate(self.topology)) {
                    return Err(UnitError::Invalid { unit: unit(), reason: "no agent may terminate".into() });
                }
            }
        }
        if self.topology == Topology::Broadcast && self.broadcast_rounds == 0 {
            return Err(UnitError::Invalid { unit: unit(), reason: "broadcast_rounds must be positive".into() });
        }
        Ok(())
    }
}
