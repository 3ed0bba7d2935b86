use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{cosine, Embedder, EmbeddingVector};
use crate::tools::ToolError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub source: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Paragraph-chunked document index for the `semantic_search` tool.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub chunks: Vec<Chunk>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("txt" | "md" | "markdown")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

/// Splits on blank lines; each non-empty paragraph becomes one chunk. A
/// paragraph made only of markdown headings is joined to the next one.
pub fn paragraphs(text: &str) -> Vec<String> {
    let mut raw = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                raw.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        raw.push(current.join("\n").trim().to_string());
    }
    let mut out = Vec::new();
    let mut heading: Option<String> = None;
    for para in raw {
        let merged = match heading.take() {
            Some(h) => format!("{h}\n{para}"),
            None => para,
        };
        if merged.lines().all(|l| l.trim_start().starts_with('#')) {
            heading = Some(merged);
        } else {
            out.push(merged);
        }
    }
    out.extend(heading);
    out
}

impl CorpusIndex {
    /// Ingests every `.txt`/`.md` file under `dir`, in path order.
    pub fn ingest_dir(dir: &Path, embedder: &dyn Embedder) -> Result<Self, String> {
        let mut files = Vec::new();
        collect_files(dir, &mut files).map_err(|e| format!("cannot read corpus {}: {e}", dir.display()))?;
        let mut index = CorpusIndex::default();
        for file in files {
            let text = fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
            let source = file
                .strip_prefix(dir)
                .unwrap_or(&file)
                .to_string_lossy()
                .replace('\\', "/");
            index.add_document(&source, &text, embedder).map_err(|e| e.to_string())?;
        }
        Ok(index)
    }

    pub fn add_document(
        &mut self,
        source: &str,
        text: &str,
        embedder: &dyn Embedder,
    ) -> Result<(), crate::backend::BackendError> {
        for (i, para) in paragraphs(text).into_iter().enumerate() {
            self.chunks.push(Chunk {
                chunk_id: format!("{source}#{i}"),
                source: source.to_string(),
                vector: embedder.embed(&para)?,
                text: para,
            });
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut file = fs::File::create(path)?;
        for chunk in &self.chunks {
            writeln!(file, "{}", serde_json::to_string(chunk)?)?;
        }
        file.flush()
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, String> {
        let file = fs::File::open(path).map_err(|e| format!("cannot open index {}: {e}", path.display()))?;
        let mut chunks = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            chunks.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
        }
        Ok(Self { chunks })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Top-`k` chunks by cosine to the query; ties keep corpus order.
    pub fn search(&self, query: &str, k: usize, embedder: &dyn Embedder) -> Result<Vec<(&Chunk, f64)>, ToolError> {
        if self.chunks.is_empty() {
            return Err(ToolError::Failed("the search index is empty".into()));
        }
        let q = embedder.embed(query).map_err(|e| ToolError::Failed(e.to_string()))?;
        let mut scored = Vec::with_capacity(self.chunks.len());
        for chunk in &self.chunks {
            let s = cosine(&q, &chunk.vector).map_err(|e| ToolError::Failed(e.to_string()))?;
            scored.push((chunk, s));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }
}
