use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CoordinatorError;
use crate::agents::{AgentSpec, AgentUnit, EpisodicSettings, Resources, Strategy};
use crate::backend::{ChatParams, Embedder, HashEmbedder, HttpConfig};
use crate::memory::EpisodeStore;
use crate::prompts::{TemplateSet, DEFAULT_TERMINATION};
use crate::queue::{linear_plan, TaskQueue, TaskSpec};
use crate::tools::{
    CategoryNode, CodeExecutionTool, CorpusIndex, FileIoTool, ScriptedOutput, SemanticSearchTool, Toolbox,
    WebSearchTool,
};

/// Planner or verifier: a single-call agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    pub persona: String,
    #[serde(default = "ChatParams::deterministic")]
    pub params: ChatParams,
}

impl RoleSpec {
    pub fn new(name: &str, persona: &str) -> Self {
        Self {
            name: name.into(),
            persona: persona.into(),
            params: ChatParams::deterministic(),
        }
    }

    pub fn to_agent(&self) -> AgentSpec {
        let mut a = AgentSpec::new(&self.name, &self.persona).with_strategy(Strategy::Basic);
        a.params = self.params.clone();
        a
    }
}

fn default_planner() -> RoleSpec {
    RoleSpec::new("Planner", "You are a planning agent.")
}

fn default_verifier() -> RoleSpec {
    RoleSpec::new("Verifier", "You are a careful reviewer.")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Scripted { fixture: PathBuf },
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeExecutionConfig {
    #[serde(default)]
    pub scripted: Vec<ScriptedOutput>,
    /// Interpreter command, fed the source on stdin. Ignored when `scripted`
    /// entries are present.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default = "default_code_timeout")]
    pub timeout_secs: u64,
}

fn default_code_timeout() -> u64 {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    /// Directory of `.txt`/`.md` documents for `semantic_search`.
    pub corpus: Option<PathBuf>,
    /// Prebuilt JSONL index, used instead of ingesting `corpus`.
    pub corpus_index: Option<PathBuf>,
    /// Jail root for `file_io`.
    pub workspace: Option<PathBuf>,
    /// Files copied into the workspace unless already there.
    pub workspace_seed: Option<PathBuf>,
    pub web_search: Option<Vec<ScriptedOutput>>,
    pub code_execution: Option<CodeExecutionConfig>,
    pub output_limit: Option<usize>,
    pub hierarchy: Option<CategoryNode>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowConfig {
    pub name: String,
    #[serde(default = "default_planner")]
    pub planner: RoleSpec,
    #[serde(default = "default_verifier")]
    pub verifier: RoleSpec,
    pub units: Vec<AgentUnit>,
    #[serde(default = "default_max_replans")]
    pub max_replans: usize,
    #[serde(default = "default_termination")]
    pub termination_literal: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub episodic: EpisodicSettings,
    /// JSONL episode file; in-memory when absent.
    #[serde(default)]
    pub episodic_store: Option<PathBuf>,
    #[serde(default)]
    pub predefined_plan: Option<Vec<TaskSpec>>,
    /// One editing rule per non-blank line, run as a linear plan.
    #[serde(default)]
    pub rules_file: Option<PathBuf>,
    #[serde(default)]
    pub human_timeout_secs: Option<u64>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub tools: ToolsConfig,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// File the config was loaded from.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

fn default_max_replans() -> usize {
    2
}

fn default_termination() -> String {
    DEFAULT_TERMINATION.into()
}

fn default_concurrency() -> usize {
    4
}

impl WorkflowConfig {
    pub fn new(name: &str, units: Vec<AgentUnit>) -> Self {
        Self {
            name: name.into(),
            planner: default_planner(),
            verifier: default_verifier(),
            units,
            max_replans: default_max_replans(),
            termination_literal: default_termination(),
            max_concurrency: default_concurrency(),
            episodic: EpisodicSettings::default(),
            episodic_store: None,
            predefined_plan: None,
            rules_file: None,
            human_timeout_secs: None,
            templates_dir: None,
            tools: ToolsConfig::default(),
            backend: None,
            base_dir: PathBuf::from("."),
            source: None,
        }
    }

    /// Reads a `.toml` or `.json` config. Personas written as `file:<path>`
    /// are replaced by that file's contents.
    pub fn load(path: &Path) -> Result<Self, CoordinatorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoordinatorError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: WorkflowConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| CoordinatorError::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| CoordinatorError::Config(format!("{}: {e}", path.display())))?,
        };
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.source = Some(std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()));
        config.inline_personas()?;
        config.validate()?;
        Ok(config)
    }

    fn inline_personas(&mut self) -> Result<(), CoordinatorError> {
        let base = self.base_dir.clone();
        let read = |persona: &mut String| -> Result<(), CoordinatorError> {
            if let Some(rel) = persona.strip_prefix("file:") {
                let p = base.join(rel.trim());
                *persona = std::fs::read_to_string(&p)
                    .map_err(|e| CoordinatorError::Config(format!("persona file {}: {e}", p.display())))?
                    .trim()
                    .to_string();
            }
            Ok(())
        };
        read(&mut self.planner.persona)?;
        read(&mut self.verifier.persona)?;
        for unit in &mut self.units {
            for agent in &mut unit.agents {
                read(&mut agent.persona)?;
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<(), CoordinatorError> {
        if self.units.is_empty() {
            return Err(CoordinatorError::Config("no agent units configured".into()));
        }
        if self.max_concurrency == 0 {
            return Err(CoordinatorError::Config("max_concurrency must be at least 1".into()));
        }
        if self.termination_literal.trim().is_empty() {
            return Err(CoordinatorError::Config("termination_literal is empty".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for unit in &self.units {
            unit.validate().map_err(|e| CoordinatorError::Config(e.to_string()))?;
            if !names.insert(unit.name.as_str()) {
                return Err(CoordinatorError::Config(format!("duplicate unit '{}'", unit.name)));
            }
        }
        if let Some(plan) = &self.predefined_plan {
            TaskQueue::build(plan).map_err(|e| CoordinatorError::Config(format!("predefined_plan: {e}")))?;
        }
        Ok(())
    }

    /// The fixed plan, if any: `predefined_plan`, else the rules file.
    pub fn fixed_plan(&self) -> Result<Option<Vec<TaskSpec>>, CoordinatorError> {
        if let Some(plan) = &self.predefined_plan {
            return Ok(Some(plan.clone()));
        }
        let Some(rules) = &self.rules_file else {
            return Ok(None);
        };
        let p = self.resolve(rules);
        let text = std::fs::read_to_string(&p)
            .map_err(|e| CoordinatorError::Config(format!("rules file {}: {e}", p.display())))?;
        let rules: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if rules.is_empty() {
            return Err(CoordinatorError::Config(format!("rules file {} is empty", p.display())));
        }
        Ok(Some(linear_plan(rules)))
    }

    pub fn human_timeout(&self) -> Option<Duration> {
        self.human_timeout_secs.map(Duration::from_secs)
    }

    /// SHA-256 over the canonical JSON form, ignoring where files live and
    /// which backend answers.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.episodic_store = None;
        c.tools.workspace = None;
        c.tools.workspace_seed = None;
        c.backend = None;
        let value = serde_json::to_value(&c).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Copies the seed files into the workspace. Without `overwrite`, files
    /// already present are kept.
    pub fn seed_workspace(&self, overwrite: bool) -> Result<(), CoordinatorError> {
        if let (Some(ws), Some(seed)) = (&self.tools.workspace, &self.tools.workspace_seed) {
            let root = self.resolve(ws);
            std::fs::create_dir_all(&root)
                .and_then(|()| copy_seed(&self.resolve(seed), &root, overwrite))
                .map_err(|e| CoordinatorError::Config(format!("workspace seed: {e}")))?;
        }
        Ok(())
    }

    /// Builds the toolbox, embedder, episode store and templates.
    pub fn resources(&self) -> Result<Resources, CoordinatorError> {
        let cfg = |m: String| CoordinatorError::Config(m);
        let embedder: Arc<dyn Embedder> = Arc::new(HashEmbedder::default());
        let mut toolbox = match &self.tools.hierarchy {
            Some(h) => Toolbox::with_hierarchy(h.clone()),
            None => Toolbox::new(),
        };
        if let Some(limit) = self.tools.output_limit {
            toolbox = toolbox.with_output_limit(limit);
        }
        let t = &self.tools;
        let index = match (&t.corpus_index, &t.corpus) {
            (Some(idx), _) => Some(CorpusIndex::load_jsonl(&self.resolve(idx)).map_err(cfg)?),
            (None, Some(dir)) => Some(CorpusIndex::ingest_dir(&self.resolve(dir), embedder.as_ref()).map_err(cfg)?),
            (None, None) => None,
        };
        if let Some(index) = index {
            toolbox
                .register(SemanticSearchTool::new(Arc::new(index), embedder.clone()).into_tool())
                .map_err(|e| cfg(e.to_string()))?;
        }
        if let Some(ws) = &t.workspace {
            let root = self.resolve(ws);
            std::fs::create_dir_all(&root).map_err(|e| cfg(format!("workspace {}: {e}", root.display())))?;
            self.seed_workspace(false)?;
            toolbox
                .register(FileIoTool::new(root).into_tool())
                .map_err(|e| cfg(e.to_string()))?;
        }
        if let Some(entries) = &t.web_search {
            toolbox
                .register(WebSearchTool::new(entries.clone()).into_tool())
                .map_err(|e| cfg(e.to_string()))?;
        }
        if let Some(code) = &t.code_execution {
            let tool = if !code.scripted.is_empty() || code.command.is_empty() {
                CodeExecutionTool::scripted(code.scripted.clone())
            } else {
                let workdir = t.workspace.as_ref().map(|w| self.resolve(w)).unwrap_or_else(|| self.base_dir.clone());
                CodeExecutionTool::process(code.command.clone(), workdir, Duration::from_secs(code.timeout_secs))
            };
            toolbox.register(tool.into_tool()).map_err(|e| cfg(e.to_string()))?;
        }
        for unit in &self.units {
            for agent in &unit.agents {
                if let Some(missing) = agent.tools.iter().find(|n| toolbox.get(n).is_none()) {
                    return Err(cfg(format!(
                        "agent '{}' in unit '{}' uses tool '{missing}', which is not configured",
                        agent.name, unit.name
                    )));
                }
            }
        }
        let episodes = match &self.episodic_store {
            Some(p) => EpisodeStore::open(self.resolve(p)).map_err(|e| cfg(e.to_string()))?,
            None => EpisodeStore::in_memory(),
        };
        let templates = match &self.templates_dir {
            Some(dir) => TemplateSet::load_dir(&self.resolve(dir)).map_err(|e| cfg(format!("templates: {e}")))?,
            None => TemplateSet::default(),
        };
        Ok(Resources {
            toolbox,
            embedder,
            episodes: Arc::new(episodes),
            templates,
        })
    }
}

fn copy_seed(seed: &Path, root: &Path, overwrite: bool) -> std::io::Result<()> {
    for entry in std::fs::read_dir(seed)? {
        let entry = entry?;
        let target = root.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            std::fs::create_dir_all(&target)?;
            copy_seed(&entry.path(), &target, overwrite)?;
        } else if overwrite || !target.exists() {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}
