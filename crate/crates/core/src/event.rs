//! Append-only, totally ordered workflow event log.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PlanCreated,
    TaskReleased,
    TaskStarted,
    AgentSelected,
    ModelCall,
    ToolInvoked,
    ObservationAdded,
    TaskCompleted,
    TaskFailed,
    VerdictIssued,
    FeedbackInjected,
    HumanRequested,
    HumanResponded,
    Snapshot,
    Resumed,
    PhaseChanged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEvent {
    pub sequence_no: u64,
    pub timestamp: DateTime<Utc>,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Default)]
struct Inner {
    events: Mutex<Vec<WorkflowEvent>>,
    appended: Condvar,
}

/// Shared handle to a workflow's event log. Clones refer to the same log;
/// `append` assigns gap-free sequence numbers under a single lock.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    inner: Arc<Inner>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<WorkflowEvent>) -> Self {
        let log = Self::new();
        *log.inner.events.lock().expect("event log poisoned") = events;
        log
    }

    pub fn append(&self, kind: EventKind, payload: Value) -> u64 {
        let mut events = self.inner.events.lock().expect("event log poisoned");
        let sequence_no = events.last().map_or(0, |e| e.sequence_no + 1);
        events.push(WorkflowEvent {
            sequence_no,
            timestamp: Utc::now(),
            kind,
            payload,
        });
        drop(events);
        self.inner.appended.notify_all();
        sequence_no
    }

    pub fn len(&self) -> usize {
        self.inner.events.lock().expect("event log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<WorkflowEvent> {
        self.inner.events.lock().expect("event log poisoned").clone()
    }

    /// Events with `sequence_no >= from`.
    pub fn since(&self, from: u64) -> Vec<WorkflowEvent> {
        let events = self.inner.events.lock().expect("event log poisoned");
        events.iter().filter(|e| e.sequence_no >= from).cloned().collect()
    }

    /// Blocks until an event with `sequence_no >= from` exists or `timeout`
    /// elapses, then returns whatever is available.
    pub fn wait_since(&self, from: u64, timeout: Duration) -> Vec<WorkflowEvent> {
        let events = self.inner.events.lock().expect("event log poisoned");
        let (events, _) = self
            .inner
            .appended
            .wait_timeout_while(events, timeout, |ev| {
                ev.last().is_none_or(|e| e.sequence_no < from)
            })
            .expect("event log poisoned");
        events.iter().filter(|e| e.sequence_no >= from).cloned().collect()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.inner
            .events
            .lock()
            .expect("event log poisoned")
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }
}

impl Serialize for EventLog {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.events().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for EventLog {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Vec::<WorkflowEvent>::deserialize(deserializer).map(EventLog::from_events)
    }
}
