//! Human feedback channels and pause/cancel switches shared between a
//! workflow's owner and its executing tasks.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackKind {
    IncidentalObservation,
    HumanProxyResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEnvelope {
    pub workflow_id: String,
    #[serde(default)]
    pub task_id: Option<String>,
    pub kind: FeedbackKind,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("no such workflow '{0}'")]
    NoSuchWorkflow(String),
    #[error("no outstanding human request")]
    NoOutstandingRequest,
    #[error("task '{0}' is already finished")]
    TaskAlreadyDone(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("workflow is not running")]
    NotRunning,
}

#[derive(Debug, Default)]
struct HubState {
    incidental: VecDeque<(Option<String>, String)>,
    /// Open human requests by task; the slot fills when answered.
    requests: BTreeMap<String, Option<String>>,
    closed: bool,
}

/// Queues incidental feedback and routes answers to `@HumanProxy` requests.
#[derive(Debug, Clone, Default)]
pub struct FeedbackHub {
    inner: Arc<(Mutex<HubState>, Condvar)>,
}

impl FeedbackHub {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HubState> {
        self.inner.0.lock().expect("feedback hub poisoned")
    }

    pub fn push_incidental(&self, task_id: Option<String>, content: impl Into<String>) {
        self.lock().incidental.push_back((task_id, content.into()));
    }

    /// Removes and returns feedback addressed to `task_id` or to no task.
    pub fn drain_incidental(&self, task_id: &str) -> Vec<String> {
        let mut state = self.lock();
        let mut taken = Vec::new();
        state.incidental.retain(|(target, content)| {
            if target.as_deref().is_none_or(|t| t == task_id) {
                taken.push(content.clone());
                false
            } else {
                true
            }
        });
        taken
    }

    /// Drops queued feedback for a finished task.
    pub fn discard_for(&self, task_id: &str) -> usize {
        let mut state = self.lock();
        let before = state.incidental.len();
        state.incidental.retain(|(t, _)| t.as_deref() != Some(task_id));
        before - state.incidental.len()
    }

    pub fn open_request(&self, task_id: &str) {
        self.lock().requests.insert(task_id.to_string(), None);
    }

    pub fn outstanding(&self) -> Vec<String> {
        self.lock()
            .requests
            .iter()
            .filter(|(_, answer)| answer.is_none())
            .map(|(t, _)| t.clone())
            .collect()
    }

    /// Answers the request of `task_id`, or the only open request when no
    /// task is named. Returns the answered task id.
    pub fn respond(&self, task_id: Option<&str>, content: impl Into<String>) -> Result<String, FeedbackError> {
        let mut state = self.lock();
        let open: Vec<String> = state
            .requests
            .iter()
            .filter(|(_, a)| a.is_none())
            .map(|(t, _)| t.clone())
            .collect();
        let target = match task_id {
            Some(t) if open.iter().any(|o| o == t) => t.to_string(),
            Some(_) => return Err(FeedbackError::NoOutstandingRequest),
            None if open.len() == 1 => open[0].clone(),
            None => return Err(FeedbackError::NoOutstandingRequest),
        };
        state.requests.insert(target.clone(), Some(content.into()));
        self.inner.1.notify_all();
        Ok(target)
    }

    /// Blocks until the request of `task_id` is answered, the timeout passes
    /// (`None`), or the hub is closed (`None`).
    pub fn await_response(&self, task_id: &str, timeout: Option<Duration>) -> Option<String> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut state = self.lock();
        loop {
            if let Some(Some(_)) = state.requests.get(task_id) {
                return state.requests.remove(task_id).flatten();
            }
            if state.closed {
                state.requests.remove(task_id);
                return None;
            }
            match deadline {
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        state.requests.remove(task_id);
                        return None;
                    }
                    state = self.inner.1.wait_timeout(state, d - now).expect("feedback hub poisoned").0;
                }
                None => state = self.inner.1.wait(state).expect("feedback hub poisoned"),
            }
        }
    }

    /// Wakes every waiter; later waits return immediately.
    pub fn close(&self) {
        self.lock().closed = true;
        self.inner.1.notify_all();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("workflow cancelled")]
pub struct Cancelled;

#[derive(Debug, Default)]
struct Switches {
    paused: bool,
    cancelled: bool,
}

/// Pause and cancel switches checked before every model call.
#[derive(Debug, Clone, Default)]
pub struct Control {
    inner: Arc<(Mutex<Switches>, Condvar)>,
}

impl Control {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false if already paused.
    pub fn pause(&self) -> bool {
        let mut s = self.inner.0.lock().expect("control poisoned");
        !std::mem::replace(&mut s.paused, true)
    }

    /// Returns false if not paused.
    pub fn resume(&self) -> bool {
        let mut s = self.inner.0.lock().expect("control poisoned");
        let was = std::mem::replace(&mut s.paused, false);
        self.inner.1.notify_all();
        was
    }

    pub fn is_paused(&self) -> bool {
        self.inner.0.lock().expect("control poisoned").paused
    }

    pub fn cancel(&self) {
        self.inner.0.lock().expect("control poisoned").cancelled = true;
        self.inner.1.notify_all();
    }

    pub fn is_cancelled(&self) -> bool {
        self.inner.0.lock().expect("control poisoned").cancelled
    }

    pub fn wait_while_paused(&self) -> Result<(), Cancelled> {
        let mut s = self.inner.0.lock().expect("control poisoned");
        while s.paused && !s.cancelled {
            s = self.inner.1.wait(s).expect("control poisoned");
        }
        if s.cancelled {
            Err(Cancelled)
        } else {
            Ok(())
        }
    }
}
