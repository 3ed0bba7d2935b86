//! Short Memory (per-agent, per-task message buffer) and Episodic Memory
//! (persistent store of completed tasks with semantic retrieval).

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{cosine, BackendError, Embedder, EmbeddingVector};
use crate::message::Message;

/// Messages exchanged with one agent while it works on one task.
///
/// The first `pinned` messages (system prompt and initial instruction) are
/// never evicted. Purging consumes the memory, so an instance cannot outlive
/// its task:
///
/// ```compile_fail
/// use taskweave_core::memory::ShortMemory;
/// use taskweave_core::message::Message;
/// let mem = ShortMemory::new(Message::system("s"), Message::user("u"), None);
/// let transcript = mem.purge();
/// mem.messages(); // use after purge
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortMemory {
    messages: Vec<Message>,
    capacity: Option<usize>,
    pinned: usize,
}

impl ShortMemory {
    pub const PINNED: usize = 2;

    pub fn new(system: Message, instruction: Message, capacity: Option<usize>) -> Self {
        let capacity = capacity.map(|c| c.max(Self::PINNED));
        Self {
            messages: vec![system, instruction],
            capacity,
            pinned: Self::PINNED,
        }
    }

    /// Appends in creation order, dropping the oldest unpinned messages once
    /// capacity is exceeded.
    pub fn append(&mut self, message: Message) {
        self.messages.push(message);
        if let Some(cap) = self.capacity {
            while self.messages.len() > cap && self.messages.len() > self.pinned {
                self.messages.remove(self.pinned);
            }
        }
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Ends the memory's life, returning the transcript.
    pub fn purge(self) -> Vec<Message> {
        self.messages
    }
}

/// Persisted record of a completed (or failed) task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub workflow_id: String,
    pub task_id: String,
    pub description: String,
    pub result: String,
    pub dependency_ids: Vec<String>,
    pub success: bool,
    pub description_vector: EmbeddingVector,
    pub result_vector: EmbeddingVector,
    pub created_at: DateTime<Utc>,
}

/// Fields of an episode before embedding.
#[derive(Debug, Clone)]
pub struct EpisodeDraft {
    pub workflow_id: String,
    pub task_id: String,
    pub description: String,
    pub result: String,
    pub dependency_ids: Vec<String>,
    pub success: bool,
}

impl EpisodeDraft {
    pub fn embed(self, embedder: &dyn Embedder) -> Result<Episode, BackendError> {
        Ok(Episode {
            episode_id: uuid::Uuid::new_v4().to_string(),
            description_vector: embedder.embed(&self.description)?,
            result_vector: embedder.embed(&self.result)?,
            workflow_id: self.workflow_id,
            task_id: self.task_id,
            description: self.description,
            result: self.result,
            dependency_ids: self.dependency_ids,
            success: self.success,
            created_at: Utc::now(),
        })
    }
}

pub type EpisodePredicate = Arc<dyn Fn(&Episode) -> bool + Send + Sync>;

/// Retrieval filters; all enabled filters must pass.
#[derive(Clone, Default, Serialize, Deserialize)]
pub struct EpisodeScope {
    #[serde(default)]
    pub same_workflow_only: bool,
    /// Exclude episodes of the querying task's direct dependencies.
    #[serde(default)]
    pub indirect_only: bool,
    #[serde(default)]
    pub successful_only: bool,
    #[serde(skip)]
    pub custom: Vec<EpisodePredicate>,
}

impl fmt::Debug for EpisodeScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EpisodeScope")
            .field("same_workflow_only", &self.same_workflow_only)
            .field("indirect_only", &self.indirect_only)
            .field("successful_only", &self.successful_only)
            .field("custom", &self.custom.len())
            .finish()
    }
}

/// Who is asking: needed by the workflow and dependency filters.
#[derive(Debug, Clone, Default)]
pub struct QueryContext {
    pub workflow_id: String,
    pub direct_dependencies: BTreeSet<String>,
}

impl EpisodeScope {
    pub fn admits(&self, episode: &Episode, ctx: &QueryContext) -> bool {
        let same_workflow = episode.workflow_id == ctx.workflow_id;
        if self.same_workflow_only && !same_workflow {
            return false;
        }
        if self.indirect_only && same_workflow && ctx.direct_dependencies.contains(&episode.task_id) {
            return false;
        }
        if self.successful_only && !episode.success {
            return false;
        }
        self.custom.iter().all(|p| p(episode))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode {
    pub episode: Episode,
    pub score: f64,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("episode storage failure: {0}")]
    Storage(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl From<std::io::Error> for MemoryError {
    fn from(e: std::io::Error) -> Self {
        MemoryError::Storage(e.to_string())
    }
}

/// Append-only JSONL episode store with a full in-memory index.
///
/// Appends hold the writer lock across the file write and the index push, so
/// file order matches index order and a query always sees a prefix of the
/// appends.
#[derive(Debug)]
pub struct EpisodeStore {
    path: Option<PathBuf>,
    index: RwLock<Vec<Episode>>,
    writer: Mutex<Option<File>>,
}

impl EpisodeStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(Vec::new()),
            writer: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the store at `path` and loads every episode.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut episodes = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let episode: Episode = serde_json::from_str(&line)
                    .map_err(|e| MemoryError::Storage(format!("{}:{}: {e}", path.display(), i + 1)))?;
                episodes.push(episode);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            index: RwLock::new(episodes),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn store(&self, episode: Episode) -> Result<(), MemoryError> {
        let mut writer = self.writer.lock().map_err(|_| MemoryError::Storage("writer lock poisoned".into()))?;
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_string(&episode).map_err(|e| MemoryError::Storage(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        self.index
            .write()
            .map_err(|_| MemoryError::Storage("index lock poisoned".into()))?
            .push(episode);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.index.read().map(|i| i.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn episodes(&self) -> Vec<Episode> {
        self.index.read().map(|i| i.clone()).unwrap_or_default()
    }

    /// Ranks admitted episodes by the better of their description and result
    /// similarity to `query`; ties keep insertion order.
    pub fn query_vector(
        &self,
        query: &EmbeddingVector,
        scope: &EpisodeScope,
        ctx: &QueryContext,
        k: usize,
    ) -> Result<Vec<ScoredEpisode>, MemoryError> {
        let index = self.index.read().map_err(|_| MemoryError::Storage("index lock poisoned".into()))?;
        let mut scored = Vec::new();
        for (i, episode) in index.iter().enumerate().filter(|(_, e)| scope.admits(e, ctx)) {
            let score = cosine(query, &episode.description_vector)?.max(cosine(query, &episode.result_vector)?);
            scored.push((i, score));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(i, score)| ScoredEpisode {
                episode: index[i].clone(),
                score,
            })
            .collect())
    }

    pub fn query(
        &self,
        query_text: &str,
        embedder: &dyn Embedder,
        scope: &EpisodeScope,
        ctx: &QueryContext,
        k: usize,
    ) -> Result<Vec<ScoredEpisode>, MemoryError> {
        let q = embedder.embed(query_text)?;
        self.query_vector(&q, scope, ctx, k)
    }
}
