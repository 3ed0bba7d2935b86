use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use taskweave_core::backend::HashEmbedder;
use taskweave_core::memory::{EpisodeDraft, EpisodeScope, EpisodeStore, QueryContext};

use crate::common::{cosine, phrase, stable_rank};

const STORES: usize = 12;

struct Raw {
    workflow: String,
    task: String,
    description: String,
    result: String,
    success: bool,
}

/// Brute-force scan: every admitted episode scored from its raw text.
fn oracle(raw: &[Raw], query: &str, flags: (bool, bool, bool), ctx: &QueryContext, k: usize) -> Vec<(usize, f64)> {
    let e = HashEmbedder::default();
    let q = e.embed_text(query);
    let (same, indirect, ok) = flags;
    let admitted: Vec<usize> = (0..raw.len())
        .filter(|&i| {
            let r = &raw[i];
            let here = r.workflow == ctx.workflow_id;
            !(same && !here) && !(indirect && here && ctx.direct_dependencies.contains(&r.task)) && !(ok && !r.success)
        })
        .collect();
    let scores: Vec<f64> = admitted
        .iter()
        .map(|&i| cosine(&e.embed_text(&raw[i].description), &q).max(cosine(&e.embed_text(&raw[i].result), &q)))
        .collect();
    let rounded: Vec<f64> = scores.iter().map(|s| (s * 1e12).round() / 1e12).collect();
    stable_rank(&rounded).into_iter().take(k).map(|j| (admitted[j], scores[j])).collect()
}

pub fn check() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0xe915);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e = HashEmbedder::default();
    let mut queries = 0;
    for s in 0..STORES {
        let n = rng.random_range(0..=100);
        let raw: Vec<Raw> = (0..n)
            .map(|_| Raw {
                workflow: format!("wf{}", rng.random_range(0..3)),
                task: format!("t{}", rng.random_range(0..8)),
                description: phrase(&mut rng, 2, 8),
                result: phrase(&mut rng, 2, 10),
                success: rng.random_bool(0.7),
            })
            .collect();
        let path = dir.path().join(format!("store{s}.jsonl"));
        let store = EpisodeStore::open(&path).map_err(|e| e.to_string())?;
        for r in &raw {
            let draft = EpisodeDraft {
                workflow_id: r.workflow.clone(),
                task_id: r.task.clone(),
                description: r.description.clone(),
                result: r.result.clone(),
                dependency_ids: vec![],
                success: r.success,
            };
            store.store(draft.embed(&e).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        }
        let ids: Vec<String> = store.episodes().into_iter().map(|ep| ep.episode_id).collect();
        ensure!(ids.len() == n, "store {s}: {} of {n} episodes kept", ids.len());
        let reopened = EpisodeStore::open(&path).map_err(|e| e.to_string())?;
        let reopened_ids: Vec<String> = reopened.episodes().into_iter().map(|ep| ep.episode_id).collect();
        ensure!(reopened_ids == ids, "store {s}: reopened store differs");

        for flags in 0..8u8 {
            let flags = (flags & 1 != 0, flags & 2 != 0, flags & 4 != 0);
            let scope = EpisodeScope {
                same_workflow_only: flags.0,
                indirect_only: flags.1,
                successful_only: flags.2,
                custom: vec![],
            };
            let ctx = QueryContext {
                workflow_id: "wf0".into(),
                direct_dependencies: (0..8).filter(|_| rng.random_bool(0.3)).map(|i| format!("t{i}")).collect::<BTreeSet<_>>(),
            };
            let query = phrase(&mut rng, 2, 8);
            let k = rng.random_range(1..=12);
            let want = oracle(&raw, &query, flags, &ctx, k);
            for (label, st) in [("live", &store), ("reopened", &reopened)] {
                let got = st.query(&query, &e, &scope, &ctx, k).map_err(|e| e.to_string())?;
                ensure!(got.len() == want.len(), "store {s} {flags:?} {label}: {} hits, oracle {}", got.len(), want.len());
                for (g, (i, score)) in got.iter().zip(&want) {
                    ensure!(g.episode.episode_id == ids[*i], "store {s} {flags:?} {label}: ranking differs from oracle");
                    ensure!((g.score - score).abs() < 1e-12, "store {s} {flags:?} {label}: score {} vs {score}", g.score);
                }
            }
            queries += 1;
        }
    }
    Ok(format!("{STORES} stores x 8 filter combinations, {queries} queries match brute force, persisted stores agree"))
}
