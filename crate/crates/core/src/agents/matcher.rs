use thiserror::Error;

use super::{AgentSpec, AgentUnit, MatcherKind};
use crate::backend::{cosine, BackendError, Embedder};
use crate::prompts::AgentRef;
use crate::queue::Task;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("no agent units configured")]
    NoUnits,
    #[error("unit '{0}' has an empty sequence")]
    EmptySequence(String),
    #[error("unit '{unit}' has no agent '{agent}'")]
    UnknownAgent { unit: String, agent: String },
    #[error("no matcher in the chain selected an agent")]
    NoSelection,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Stable descending sort by score: ties keep their input order.
fn rank(scores: Vec<f64>) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

/// Units by cosine of their concatenated personas to `task_description`.
pub fn rank_units(
    units: &[AgentUnit],
    task_description: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<(usize, f64)>, BackendError> {
    let q = embedder.embed(task_description)?;
    let scores = units
        .iter()
        .map(|u| cosine(&embedder.embed(&u.description())?, &q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank(scores))
}

/// Honors the task's unit hint when it names a unit; otherwise the best
/// semantic match.
pub fn match_unit<'u>(units: &'u [AgentUnit], task: &Task, embedder: &dyn Embedder) -> Result<&'u AgentUnit, MatchError> {
    if units.is_empty() {
        return Err(MatchError::NoUnits);
    }
    if units.len() == 1 {
        return Ok(&units[0]);
    }
    if let Some(hint) = &task.unit_hint {
        if let Some(u) = units
            .iter()
            .find(|u| u.name == *hint)
            .or_else(|| units.iter().find(|u| u.name.eq_ignore_ascii_case(hint)))
        {
            return Ok(u);
        }
        log::warn!("task '{}' names unknown unit '{}'; matching semantically", task.id, hint);
    }
    let ranked = rank_units(units, &task.description, embedder)?;
    Ok(&units[ranked[0].0])
}

/// `sequence[i]`, wrapping around once the sequence is exhausted.
pub fn match_iterative(unit: &AgentUnit, iteration: usize) -> Result<&AgentSpec, MatchError> {
    let seq = unit.effective_sequence();
    if seq.is_empty() {
        return Err(MatchError::EmptySequence(unit.name.clone()));
    }
    let name = &seq[iteration % seq.len()];
    unit.agent(name).ok_or_else(|| MatchError::UnknownAgent {
        unit: unit.name.clone(),
        agent: name.clone(),
    })
}

/// Agents by cosine of their persona to `task_description`.
pub fn rank_agents(
    unit: &AgentUnit,
    task_description: &str,
    embedder: &dyn Embedder,
) -> Result<Vec<(usize, f64)>, BackendError> {
    let q = embedder.embed(task_description)?;
    let scores = unit
        .agents
        .iter()
        .map(|a| cosine(&embedder.embed(&a.persona)?, &q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rank(scores))
}

pub fn match_semantic<'u>(
    unit: &'u AgentUnit,
    task_description: &str,
    embedder: &dyn Embedder,
) -> Result<&'u AgentSpec, MatchError> {
    if unit.agents.is_empty() {
        return Err(MatchError::EmptySequence(unit.name.clone()));
    }
    let ranked = rank_agents(unit, task_description, embedder)?;
    Ok(&unit.agents[ranked[0].0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection<'u> {
    Agent(&'u AgentSpec),
    Human,
}

pub fn match_mention<'u>(
    unit: &'u AgentUnit,
    next: &AgentRef,
    current: &'u AgentSpec,
) -> Result<Selection<'u>, MatchError> {
    match next {
        AgentRef::SelfRef => Ok(Selection::Agent(current)),
        AgentRef::HumanProxy => Ok(Selection::Human),
        AgentRef::Named(name) => unit
            .agents
            .iter()
            .find(|a| a.name.eq_ignore_ascii_case(name))
            .map(Selection::Agent)
            .ok_or_else(|| MatchError::UnknownAgent {
                unit: unit.name.clone(),
                agent: name.clone(),
            }),
    }
}

/// Runs the unit's matcher chain for one iteration. The mention matcher
/// yields only when the previous step named an agent.
pub fn select_agent<'u>(
    unit: &'u AgentUnit,
    iteration: usize,
    previous: Option<(&'u AgentSpec, Option<&AgentRef>)>,
    task_description: &str,
    embedder: &dyn Embedder,
) -> Result<&'u AgentSpec, MatchError> {
    for kind in unit.matcher().chain() {
        let picked = match kind {
            MatcherKind::Iterative => Some(match_iterative(unit, iteration)?),
            MatcherKind::Semantic => Some(match_semantic(unit, task_description, embedder)?),
            MatcherKind::Mention => match previous {
                Some((current, Some(next))) => match match_mention(unit, next, current)? {
                    Selection::Agent(a) => Some(a),
                    Selection::Human => Some(current),
                },
                Some((current, None)) if iteration > 0 => Some(current),
                _ => None,
            },
            MatcherKind::Composite => None,
        };
        if let Some(a) = picked {
            return Ok(a);
        }
    }
    Err(MatchError::NoSelection)
}
