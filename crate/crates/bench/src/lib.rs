//! Synthetic inputs shared by the benches.

use serde_json::{Map, Value};
use taskweave_core::backend::HashEmbedder;
use taskweave_core::memory::{EpisodeDraft, EpisodeStore};
use taskweave_core::queue::TaskSpec;
use taskweave_core::tools::{Tool, ToolSpec, Toolbox};

const WORDS: &[&str] = &[
    "solar", "wind", "battery", "storage", "grid", "report", "rule", "edit", "python", "module", "test", "search",
    "index", "query", "summary", "budget", "forecast", "demand", "peak", "evening", "cloud", "turbine", "pump", "hydro",
];

/// Deterministic `n`-word phrase keyed by `seed`.
pub fn phrase(seed: usize, n: usize) -> String {
    (0..n)
        .map(|i| WORDS[(seed.wrapping_mul(31).wrapping_add(i * 17)) % WORDS.len()])
        .collect::<Vec<_>>()
        .join(" ")
}

/// `layers` x `width` tasks; each task depends on every task of the layer
/// before it.
pub fn layered_dag(layers: usize, width: usize) -> Vec<TaskSpec> {
    let id = |l: usize, w: usize| format!("l{l}w{w}");
    let mut specs = Vec::with_capacity(layers * width);
    for l in 0..layers {
        for w in 0..width {
            let deps: Vec<String> = if l == 0 { vec![] } else { (0..width).map(|p| id(l - 1, p)).collect() };
            specs.push(TaskSpec::new(id(l, w), phrase(l * width + w, 6)).after(deps));
        }
    }
    specs
}

pub fn toolbox(n: usize) -> Toolbox {
    let mut toolbox = Toolbox::new();
    for i in 0..n {
        let spec = ToolSpec {
            name: format!("tool{i}"),
            description: phrase(i, 8),
            input_schema: vec![],
            output_doc: String::new(),
            category_path: vec![],
        };
        toolbox
            .register(Tool::new(spec, |_: &Map<String, Value>| Ok(String::new())))
            .expect("unique names");
    }
    toolbox
}

pub fn episode_store(n: usize, embedder: &HashEmbedder) -> EpisodeStore {
    let store = EpisodeStore::in_memory();
    for i in 0..n {
        let draft = EpisodeDraft {
            workflow_id: format!("wf{}", i % 5),
            task_id: format!("t{}", i % 20),
            description: phrase(i, 10),
            result: phrase(i + 7, 30),
            dependency_ids: vec![],
            success: i % 4 != 0,
        };
        store.store(draft.embed(embedder).expect("hash embedding")).expect("in memory");
    }
    store
}
