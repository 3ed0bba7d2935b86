//! Tools used by the shipped example workflows.

use std::fs;
use std::io::{Read, Write};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{CorpusIndex, ParamSpec, ParamType, Tool, ToolError, ToolSpec};
use crate::backend::Embedder;

fn str_arg<'a>(args: &'a Map<String, Value>, name: &str) -> Option<&'a str> {
    args.get(name).and_then(Value::as_str)
}

/// Ranked passage lookup over an ingested corpus.
pub struct SemanticSearchTool {
    pub index: Arc<CorpusIndex>,
    pub embedder: Arc<dyn Embedder>,
    pub default_k: usize,
}

impl SemanticSearchTool {
    pub fn new(index: Arc<CorpusIndex>, embedder: Arc<dyn Embedder>) -> Self {
        Self { index, embedder, default_k: 3 }
    }

    pub fn spec() -> ToolSpec {
        ToolSpec {
            name: "semantic_search".into(),
            description: "Search the document corpus for passages relevant to a question".into(),
            input_schema: vec![
                ParamSpec::required("query", ParamType::String, "natural language search query"),
                ParamSpec::optional("k", ParamType::Int, "number of passages to return (default 3)"),
            ],
            output_doc: "ranked passages, each with its source id and similarity score".into(),
            category_path: vec![],
        }
    }

    pub fn search(&self, query: &str, k: usize) -> Result<String, ToolError> {
        let hits = self.index.search(query, k, self.embedder.as_ref())?;
        let blocks: Vec<String> = hits
            .iter()
            .enumerate()
            .map(|(i, (chunk, score))| format!("[{}] {} (score {:.4})\n{}", i + 1, chunk.chunk_id, score, chunk.text))
            .collect();
        Ok(blocks.join("\n\n"))
    }

    pub fn into_tool(self) -> Tool {
        Tool::new(Self::spec(), move |args: &Map<String, Value>| {
            let query = str_arg(args, "query").unwrap_or_default();
            let k = args
                .get("k")
                .and_then(Value::as_i64)
                .map_or(self.default_k, |k| k.max(1) as usize);
            self.search(query, k)
        })
    }
}

/// Read, write, and list files inside a workspace directory.
#[derive(Debug, Clone)]
pub struct FileIoTool {
    root: PathBuf,
}

impl FileIoTool {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn spec() -> ToolSpec {
        ToolSpec {
            name: "file_io".into(),
            description: "Read, write or list files in the project workspace".into(),
            input_schema: vec![
                ParamSpec::required("mode", ParamType::String, "one of read, write, list"),
                ParamSpec::required("path", ParamType::String, "path relative to the workspace root"),
                ParamSpec::optional("content", ParamType::String, "file content, required for write"),
            ],
            output_doc: "file content for read, a confirmation for write, one entry per line for list".into(),
            category_path: vec![],
        }
    }

    /// Maps a workspace-relative path into the jail. Absolute paths and any
    /// `..` component are rejected.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, ToolError> {
        let rel = Path::new(path);
        let mut out = self.root.clone();
        for comp in rel.components() {
            match comp {
                Component::Normal(part) => out.push(part),
                Component::CurDir => {}
                Component::ParentDir | Component::RootDir | Component::Prefix(_) => {
                    return Err(ToolError::InvalidArgument(format!("path '{path}' escapes the workspace")));
                }
            }
        }
        Ok(out)
    }

    pub fn run(&self, args: &Map<String, Value>) -> Result<String, ToolError> {
        let mode = str_arg(args, "mode").unwrap_or_default();
        let path = str_arg(args, "path").unwrap_or_default();
        let target = self.resolve(path)?;
        match mode {
            "read" => fs::read_to_string(&target).map_err(|e| ToolError::Failed(format!("cannot read '{path}': {e}"))),
            "write" => {
                let content = str_arg(args, "content")
                    .ok_or_else(|| ToolError::InvalidArgument("content is required for write".into()))?;
                if let Some(parent) = target.parent() {
                    fs::create_dir_all(parent).map_err(|e| ToolError::Failed(e.to_string()))?;
                }
                fs::write(&target, content).map_err(|e| ToolError::Failed(format!("cannot write '{path}': {e}")))?;
                Ok(format!("wrote {} bytes to {path}", content.len()))
            }
            "list" => {
                let mut names = Vec::new();
                let entries = fs::read_dir(&target).map_err(|e| ToolError::Failed(format!("cannot list '{path}': {e}")))?;
                for entry in entries {
                    let entry = entry.map_err(|e| ToolError::Failed(e.to_string()))?;
                    let mut name = entry.file_name().to_string_lossy().into_owned();
                    if entry.path().is_dir() {
                        name.push('/');
                    }
                    names.push(name);
                }
                names.sort();
                Ok(names.join("\n"))
            }
            other => Err(ToolError::InvalidArgument(format!("mode must be read, write or list, got '{other}'"))),
        }
    }

    pub fn into_tool(self) -> Tool {
        Tool::new(Self::spec(), move |args: &Map<String, Value>| self.run(args))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedOutput {
    /// Substring the input must contain for this entry to apply.
    #[serde(alias = "query")]
    pub expect: String,
    #[serde(alias = "result")]
    pub output: String,
}

/// Web search backed by a fixture table: the first entry whose pattern occurs
/// in the query (case-insensitive) answers it.
#[derive(Debug, Clone, Default)]
pub struct WebSearchTool {
    entries: Vec<ScriptedOutput>,
}

impl WebSearchTool {
    pub fn new(entries: Vec<ScriptedOutput>) -> Self {
        Self { entries }
    }

    pub fn spec() -> ToolSpec {
        ToolSpec {
            name: "web_search".into(),
            description: "Search the web for references, documentation and design guidance".into(),
            input_schema: vec![ParamSpec::required("query", ParamType::String, "search terms")],
            output_doc: "a list of result snippets".into(),
            category_path: vec![],
        }
    }

    pub fn search(&self, query: &str) -> String {
        let q = query.to_lowercase();
        self.entries
            .iter()
            .find(|e| q.contains(&e.expect.to_lowercase()))
            .map(|e| e.output.clone())
            .unwrap_or_else(|| format!("No results found for '{query}'"))
    }

    pub fn into_tool(self) -> Tool {
        Tool::new(Self::spec(), move |args: &Map<String, Value>| {
            Ok(self.search(str_arg(args, "query").unwrap_or_default()))
        })
    }
}

#[derive(Debug, Clone)]
enum CodeRunner {
    Scripted(Vec<ScriptedOutput>),
    Process {
        command: Vec<String>,
        workdir: PathBuf,
        timeout: Duration,
    },
}

/// Runs source code and reports its output. Either fixture-backed or a real
/// subprocess fed the source on stdin.
#[derive(Debug, Clone)]
pub struct CodeExecutionTool {
    runner: CodeRunner,
}

impl CodeExecutionTool {
    pub fn scripted(entries: Vec<ScriptedOutput>) -> Self {
        Self { runner: CodeRunner::Scripted(entries) }
    }

    pub fn process(command: Vec<String>, workdir: impl Into<PathBuf>, timeout: Duration) -> Self {
        assert!(!command.is_empty(), "code execution needs a command");
        Self {
            runner: CodeRunner::Process {
                command,
                workdir: workdir.into(),
                timeout,
            },
        }
    }

    pub fn spec() -> ToolSpec {
        ToolSpec {
            name: "code_execution".into(),
            description: "Execute source code or test commands and report stdout and stderr".into(),
            input_schema: vec![ParamSpec::required("source", ParamType::String, "program source to execute")],
            output_doc: "exit status, stdout and stderr of the run".into(),
            category_path: vec![],
        }
    }

    pub fn execute(&self, source: &str) -> Result<String, ToolError> {
        match &self.runner {
            CodeRunner::Scripted(entries) => entries
                .iter()
                .find(|e| source.contains(&e.expect))
                .map(|e| e.output.clone())
                .ok_or_else(|| ToolError::Failed("no scripted output matches this source".into())),
            CodeRunner::Process { command, workdir, timeout } => run_process(command, workdir, *timeout, source),
        }
    }

    pub fn into_tool(self) -> Tool {
        Tool::new(Self::spec(), move |args: &Map<String, Value>| {
            self.execute(str_arg(args, "source").unwrap_or_default())
        })
    }
}

fn run_process(command: &[String], workdir: &Path, timeout: Duration, source: &str) -> Result<String, ToolError> {
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .current_dir(workdir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| ToolError::Failed(format!("cannot start {}: {e}", command[0])))?;
    if let Some(mut stdin) = child.stdin.take() {
        stdin.write_all(source.as_bytes()).map_err(|e| ToolError::Failed(e.to_string()))?;
    }
    let mut stdout = child.stdout.take().expect("piped");
    let mut stderr = child.stderr.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| ToolError::Failed(e.to_string()))? {
            break status;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(ToolError::Failed(format!("timed out after {}s", timeout.as_secs_f64())));
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    Ok(format!(
        "exit status: {}\nstdout:\n{}\nstderr:\n{}",
        status.code().map_or("signal".to_string(), |c| c.to_string()),
        out.trim_end(),
        err.trim_end()
    ))
}
