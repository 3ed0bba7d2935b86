use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CoordinatorError, WorkflowState};
use crate::event::EventKind;
use crate::memory::Episode;
use crate::message::Message;

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

/// Versioned, self-contained copy of a workflow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub config_fingerprint: String,
    /// Config file the workflow ran under, when it came from a file.
    #[serde(default)]
    pub config_path: Option<PathBuf>,
    pub state: WorkflowState,
    /// Per-agent short memory of tasks running when the snapshot was taken.
    pub transcripts: BTreeMap<String, BTreeMap<String, Vec<Message>>>,
    /// Episodes this workflow stored so far.
    pub episodes: Vec<Episode>,
}

impl Snapshot {
    /// Writes through a temporary file so readers never see a partial
    /// snapshot.
    pub fn save(&self, path: &Path) -> Result<(), CoordinatorError> {
        let err = |e: std::io::Error| CoordinatorError::Snapshot(format!("{}: {e}", path.display()));
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| CoordinatorError::Snapshot(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text).map_err(err)?;
        std::fs::rename(&tmp, path).map_err(err)
    }

    pub fn load(path: &Path) -> Result<Self, CoordinatorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoordinatorError::Snapshot(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CoordinatorError::Snapshot(format!("{}: {e}", path.display())))?;
        let version = value.get("schema_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if version != SNAPSHOT_SCHEMA_VERSION {
            return Err(CoordinatorError::SchemaVersionMismatch {
                found: version,
                expected: SNAPSHOT_SCHEMA_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| CoordinatorError::Snapshot(format!("{}: {e}", path.display())))
    }

    /// Model calls already answered before the snapshot; a replayed script
    /// skips this many entries.
    pub fn model_calls(&self) -> usize {
        self.state
            .event_log
            .iter()
            .filter(|e| e.kind == EventKind::ModelCall)
            .count()
    }
}
