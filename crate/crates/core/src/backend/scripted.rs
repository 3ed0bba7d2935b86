use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

/// One fixture line: an optional substring the rendered prompt must contain,
/// and the response to return.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default)]
    pub expect: Option<String>,
    pub response: String,
}

impl ScriptEntry {
    pub fn new(expect: Option<&str>, response: impl Into<String>) -> Self {
        Self {
            expect: expect.map(str::to_string),
            response: response.into(),
        }
    }
}

/// A recorded prompt/response pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Default)]
struct Cursor {
    position: usize,
    transcript: Vec<Exchange>,
}

/// Replays fixture entries strictly in order. Calls are serialized
/// internally, so concurrent callers see a total order.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    cursor: Mutex<Cursor>,
}

const TAIL: usize = 600;

fn tail(text: &str) -> String {
    let n = text.chars().count();
    if n <= TAIL {
        return text.to_string();
    }
    let skip = n - TAIL;
    format!("...{}", text.chars().skip(skip).collect::<String>())
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self {
            entries,
            cursor: Mutex::new(Cursor::default()),
        }
    }

    /// Responses only, no expectations.
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses
                .into_iter()
                .map(|r| ScriptEntry { expect: None, response: r.into() })
                .collect(),
        )
    }

    /// Parses JSONL: one `{"expect": string|null, "response": string}` per
    /// non-blank line.
    pub fn parse_jsonl(text: &str) -> Result<Vec<ScriptEntry>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ScriptEntry>(l).map_err(|e| format!("fixture line {}: {e}", i + 1))
            })
            .collect()
    }

    pub fn from_jsonl_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read fixture {}: {e}", path.display()))?;
        Ok(Self::new(Self::parse_jsonl(&text)?))
    }

    /// Moves the cursor forward without checking expectations. Used when
    /// resuming a run whose earlier calls were already consumed.
    pub fn skip(self, n: usize) -> Self {
        self.cursor.lock().expect("script poisoned").position = n.min(self.entries.len());
        self
    }

    pub fn position(&self) -> usize {
        self.cursor.lock().expect("script poisoned").position
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.position()
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.cursor.lock().expect("script poisoned").transcript.clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let prompt = request.render();
        let mut cursor = self.cursor.lock().expect("script poisoned");
        let index = cursor.position;
        let entry = self.entries.get(index).ok_or_else(|| BackendError::ScriptExhausted {
            consumed: index,
            prompt_tail: tail(&prompt),
        })?;
        if let Some(expected) = &entry.expect {
            if !prompt.contains(expected.as_str()) {
                return Err(BackendError::ScriptMismatch {
                    index,
                    expected: expected.clone(),
                    prompt_tail: tail(&prompt),
                });
            }
        }
        cursor.position += 1;
        cursor.transcript.push(Exchange {
            prompt,
            response: entry.response.clone(),
        });
        Ok(entry.response.clone())
    }
}
