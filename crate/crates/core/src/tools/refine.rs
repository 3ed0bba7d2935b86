use serde::{Deserialize, Serialize};

use super::{ToolSpec, Toolbox};
use crate::backend::{cosine, BackendError, Embedder};

/// Node of the tool category tree. The root has an empty label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryNode {
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub children: Vec<CategoryNode>,
}

impl CategoryNode {
    pub fn root() -> Self {
        Self::new("", "")
    }

    pub fn new(label: &str, description: &str) -> Self {
        Self {
            label: label.into(),
            description: description.into(),
            children: Vec::new(),
        }
    }

    pub fn child(mut self, node: CategoryNode) -> Self {
        self.children.push(node);
        self
    }

    /// Follows `path` (child labels) from this node.
    pub fn find(&self, path: &[String]) -> Option<&CategoryNode> {
        let mut node = self;
        for label in path {
            node = node.children.iter().find(|c| &c.label == label)?;
        }
        Some(node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RefinerKind {
    #[default]
    Identity,
    Hierarchical,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    pub kind: RefinerKind,
    pub k: usize,
    pub min_similarity: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            kind: RefinerKind::Identity,
            k: 5,
            min_similarity: 0.0,
        }
    }
}

impl RefinerConfig {
    pub fn semantic(k: usize) -> Self {
        Self {
            kind: RefinerKind::Semantic,
            k: k.max(1),
            ..Self::default()
        }
    }

    pub fn hierarchical() -> Self {
        Self {
            kind: RefinerKind::Hierarchical,
            ..Self::default()
        }
    }
}

/// Narrows `toolbox` to the tools worth showing for `task`.
///
/// * Identity: every tool, registration order.
/// * Semantic: top-`k` by description/task cosine with similarity
///   `>= min_similarity`, best first, ties in registration order.
/// * Hierarchical: greedy descent through the category tree, scoring each
///   child's `label + description` against the task; returns the tools filed
///   at the reached leaf plus all uncategorized tools.
pub fn refine(
    toolbox: &Toolbox,
    task: &str,
    config: &RefinerConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<ToolSpec>, BackendError> {
    let specs = toolbox.specs();
    match config.kind {
        RefinerKind::Identity => Ok(specs),
        RefinerKind::Semantic => {
            let query = embedder.embed(task)?;
            let mut scored = Vec::with_capacity(specs.len());
            for spec in specs {
                let score = cosine(&embedder.embed(&spec.description)?, &query)?;
                scored.push((score, spec));
            }
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            Ok(scored
                .into_iter()
                .filter(|(s, _)| *s >= config.min_similarity)
                .take(config.k.max(1))
                .map(|(_, spec)| spec)
                .collect())
        }
        RefinerKind::Hierarchical => {
            let query = embedder.embed(task)?;
            let mut node = toolbox.hierarchy();
            let mut path = Vec::new();
            while !node.children.is_empty() {
                let mut best: Option<(f64, &CategoryNode)> = None;
                for child in &node.children {
                    let text = format!("{} {}", child.label, child.description);
                    let score = cosine(&embedder.embed(&text)?, &query)?;
                    if best.is_none_or(|(s, _)| score > s) {
                        best = Some((score, child));
                    }
                }
                let (_, chosen) = best.expect("non-empty children");
                path.push(chosen.label.clone());
                node = chosen;
            }
            Ok(specs
                .into_iter()
                .filter(|s| s.category_path.is_empty() || s.category_path == path)
                .collect())
        }
    }
}
