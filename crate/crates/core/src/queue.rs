//! Plan DAG and the dependency-resolving task queue.
//!
//! A [`TaskQueue`] is built from planner-issued [`TaskSpec`]s, validated as a
//! DAG, and then driven by the coordinator through
//! `ready_tasks -> start_task -> complete_task`. Results of finished tasks are
//! copied into the `dependency_results` of their direct dependents.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One entry of the plan interchange format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub unit_hint: Option<String>,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            depends_on: Vec::new(),
            unit_hint: None,
        }
    }

    pub fn after<I, S>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.depends_on = deps.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_hint(mut self, unit: impl Into<String>) -> Self {
        self.unit_hint = Some(unit.into());
        self
    }
}

/// Turns an ordered list of rules into tasks with a linear dependency chain.
pub fn linear_plan<I, S>(rules: I) -> Vec<TaskSpec>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut specs: Vec<TaskSpec> = Vec::new();
    for (i, rule) in rules.into_iter().enumerate() {
        let id = format!("rule-{:02}", i + 1);
        let mut spec = TaskSpec::new(id, rule);
        if let Some(prev) = specs.last() {
            spec.depends_on = vec![prev.id.clone()];
        }
        specs.push(spec);
    }
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Ready,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub description: String,
    pub depends_on: BTreeSet<String>,
    pub status: TaskStatus,
    pub result: Option<String>,
    pub dependency_results: BTreeMap<String, String>,
    pub unit_hint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("plan contains no tasks")]
    EmptyPlan,
    #[error("duplicate task id '{0}'")]
    DuplicateId(String),
    #[error("task '{task}' depends on unknown task '{missing}'")]
    UnknownDependency { task: String, missing: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("task '{id}' cannot move from {from:?} to {to:?}")]
    InvalidTransition {
        id: String,
        from: TaskStatus,
        to: TaskStatus,
    },
}

/// DAG-aware task container. Tasks are kept in id order so every iteration
/// over the queue is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskQueue {
    tasks: BTreeMap<String, Task>,
}

impl TaskQueue {
    /// Validates `specs` and builds a queue. Sources start `Ready`, everything
    /// else `Pending`.
    pub fn build(specs: &[TaskSpec]) -> Result<Self, QueueError> {
        if specs.is_empty() {
            return Err(QueueError::EmptyPlan);
        }
        let mut tasks = BTreeMap::new();
        for spec in specs {
            let task = Task {
                id: spec.id.clone(),
                description: spec.description.clone(),
                depends_on: spec.depends_on.iter().cloned().collect(),
                status: if spec.depends_on.is_empty() {
                    TaskStatus::Ready
                } else {
                    TaskStatus::Pending
                },
                result: None,
                dependency_results: BTreeMap::new(),
                unit_hint: spec.unit_hint.clone(),
            };
            if tasks.insert(spec.id.clone(), task).is_some() {
                return Err(QueueError::DuplicateId(spec.id.clone()));
            }
        }
        for task in tasks.values() {
            if let Some(missing) = task.depends_on.iter().find(|d| !tasks.contains_key(*d)) {
                return Err(QueueError::UnknownDependency {
                    task: task.id.clone(),
                    missing: missing.clone(),
                });
            }
        }
        let queue = Self { tasks };
        if let Some(cycle) = queue.find_cycle() {
            return Err(QueueError::CycleDetected(cycle));
        }
        Ok(queue)
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    /// Direct dependents of `id`, in id order.
    pub fn dependents<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Task> + 'a {
        self.tasks.values().filter(move |t| t.depends_on.contains(id))
    }

    /// Tasks nobody depends on, in id order.
    pub fn sinks(&self) -> Vec<&Task> {
        self.tasks
            .values()
            .filter(|t| self.dependents(&t.id).next().is_none())
            .collect()
    }

    fn deps_done(&self, task: &Task) -> bool {
        task.depends_on
            .iter()
            .all(|d| self.tasks.get(d).is_some_and(|p| p.status == TaskStatus::Done))
    }

    /// Releases every task whose dependencies are all `Done` and that has not
    /// started yet. The whole antichain is released at once and returned as
    /// independent copies.
    pub fn ready_tasks(&mut self) -> Vec<Task> {
        let ids: Vec<String> = self
            .tasks
            .values()
            .filter(|t| matches!(t.status, TaskStatus::Pending | TaskStatus::Ready))
            .filter(|t| self.deps_done(t))
            .map(|t| t.id.clone())
            .collect();
        ids.iter()
            .map(|id| {
                let task = self.tasks.get_mut(id).expect("id collected above");
                task.status = TaskStatus::Ready;
                task.clone()
            })
            .collect()
    }

    pub fn start_task(&mut self, id: &str) -> Result<Task, QueueError> {
        let task = self.transition(id, TaskStatus::Ready, TaskStatus::Running)?;
        Ok(task.clone())
    }

    /// Marks a running task `Done` and copies `result` into every direct
    /// dependent.
    pub fn complete_task(&mut self, id: &str, result: impl Into<String>) -> Result<(), QueueError> {
        let result = result.into();
        let task = self.transition(id, TaskStatus::Running, TaskStatus::Done)?;
        task.result = Some(result.clone());
        let dependents: Vec<String> = self.dependents(id).map(|t| t.id.clone()).collect();
        for dep_id in dependents {
            let dependent = self.tasks.get_mut(&dep_id).expect("dependent exists");
            dependent.dependency_results.insert(id.to_string(), result.clone());
        }
        for dep_id in self.dependents(id).map(|t| t.id.clone()).collect::<Vec<_>>() {
            let ready = {
                let t = &self.tasks[&dep_id];
                t.status == TaskStatus::Pending && self.deps_done(t)
            };
            if ready {
                self.tasks.get_mut(&dep_id).expect("exists").status = TaskStatus::Ready;
            }
        }
        Ok(())
    }

    pub fn fail_task(&mut self, id: &str, reason: impl Into<String>) -> Result<(), QueueError> {
        let task = self.transition(id, TaskStatus::Running, TaskStatus::Failed)?;
        task.result = Some(reason.into());
        Ok(())
    }

    /// Returns `Running` tasks to their pre-start status. Used when resuming a
    /// snapshot: interrupted tasks restart from the beginning.
    pub fn reset_running(&mut self) -> Vec<String> {
        let running: Vec<String> = self
            .tasks
            .values()
            .filter(|t| t.status == TaskStatus::Running)
            .map(|t| t.id.clone())
            .collect();
        for id in &running {
            self.tasks.get_mut(id).expect("exists").status = TaskStatus::Ready;
        }
        running
    }

    fn transition(
        &mut self,
        id: &str,
        from: TaskStatus,
        to: TaskStatus,
    ) -> Result<&mut Task, QueueError> {
        let task = self
            .tasks
            .get_mut(id)
            .ok_or_else(|| QueueError::UnknownTask(id.to_string()))?;
        if task.status != from {
            return Err(QueueError::InvalidTransition {
                id: id.to_string(),
                from: task.status,
                to,
            });
        }
        task.status = to;
        Ok(task)
    }

    pub fn all_done(&self) -> bool {
        self.tasks.values().all(|t| t.status == TaskStatus::Done)
    }

    pub fn any_failed(&self) -> bool {
        self.tasks.values().any(|t| t.status == TaskStatus::Failed)
    }

    pub fn count(&self, status: TaskStatus) -> usize {
        self.tasks.values().filter(|t| t.status == status).count()
    }

    /// Kahn's algorithm with the smallest available id always taken first.
    pub fn topological_order(&self) -> Result<Vec<String>, QueueError> {
        let mut indegree: BTreeMap<&str, usize> = self
            .tasks
            .values()
            .map(|t| (t.id.as_str(), t.depends_on.len()))
            .collect();
        let mut frontier: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.tasks.len());
        while let Some(id) = frontier.pop_first() {
            order.push(id.to_string());
            for child in self.dependents(id) {
                let n = indegree.get_mut(child.id.as_str()).expect("child indexed");
                *n -= 1;
                if *n == 0 {
                    frontier.insert(child.id.as_str());
                }
            }
        }
        if order.len() != self.tasks.len() {
            let cycle = self.find_cycle().unwrap_or_default();
            return Err(QueueError::CycleDetected(cycle));
        }
        Ok(order)
    }

    /// Depth-first search along `depends_on` edges; returns one cycle with the
    /// starting id repeated at the end.
    fn find_cycle(&self) -> Option<Vec<String>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Finished,
        }
        let mut marks: BTreeMap<&str, Mark> =
            self.tasks.keys().map(|k| (k.as_str(), Mark::Fresh)).collect();
        for root in self.tasks.keys() {
            if marks[root.as_str()] != Mark::Fresh {
                continue;
            }
            // (node, remaining parents)
            let mut stack: Vec<(&str, Vec<&str>)> = Vec::new();
            let parents = |id: &str| -> Vec<&str> {
                self.tasks
                    .get(id)
                    .map(|t| t.depends_on.iter().rev().map(String::as_str).collect())
                    .unwrap_or_default()
            };
            marks.insert(root.as_str(), Mark::Active);
            stack.push((root.as_str(), parents(root)));
            while let Some((node, pending)) = stack.last_mut() {
                let node = *node;
                match pending.pop() {
                    Some(next) => match marks.get(next).copied() {
                        Some(Mark::Fresh) => {
                            marks.insert(next, Mark::Active);
                            let p = parents(next);
                            stack.push((next, p));
                        }
                        Some(Mark::Active) => {
                            let start = stack.iter().position(|(n, _)| *n == next).unwrap_or(0);
                            let mut cycle: Vec<String> =
                                stack[start..].iter().map(|(n, _)| n.to_string()).collect();
                            cycle.push(next.to_string());
                            return Some(cycle);
                        }
                        _ => {}
                    },
                    None => {
                        marks.insert(node, Mark::Finished);
                        stack.pop();
                    }
                }
            }
        }
        None
    }
}
