use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{Map, Value};
use taskweave_core::agents::{match_semantic, match_unit, rank_agents, rank_units, AgentSpec, AgentUnit, Topology};
use taskweave_core::backend::HashEmbedder;
use taskweave_core::queue::{TaskQueue, TaskSpec};
use taskweave_core::tools::{refine, RefinerConfig, RefinerKind, Tool, ToolSpec, Toolbox};

use crate::common::{cosine, phrase, stable_rank};

const INSTANCES: usize = 200;

/// Oracle ranking; scores equal to 1e-12 count as ties.
fn oracle(texts: &[String], query: &str) -> (Vec<usize>, Vec<f64>) {
    let e = HashEmbedder::default();
    let q = e.embed_text(query);
    let scores: Vec<f64> = texts.iter().map(|t| cosine(&e.embed_text(t), &q)).collect();
    let rounded: Vec<f64> = scores.iter().map(|s| (s * 1e12).round() / 1e12).collect();
    (stable_rank(&rounded), scores)
}

fn tool(name: &str, description: &str) -> Tool {
    let spec = ToolSpec {
        name: name.into(),
        description: description.into(),
        input_schema: vec![],
        output_doc: String::new(),
        category_path: vec![],
    };
    Tool::new(spec, |_: &Map<String, Value>| Ok(String::new()))
}

fn check_refiner(rng: &mut StdRng, case: usize) -> Result<(), String> {
    let n = rng.random_range(1..=20);
    let descriptions: Vec<String> = (0..n).map(|_| phrase(rng, 1, 6)).collect();
    let mut toolbox = Toolbox::new();
    for (i, d) in descriptions.iter().enumerate() {
        toolbox.register(tool(&format!("tool{i}"), d)).unwrap();
    }
    let task = phrase(rng, 2, 8);
    let k = rng.random_range(0..=n + 2);
    let min_similarity = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..0.6) };
    let config = RefinerConfig {
        kind: RefinerKind::Semantic,
        k,
        min_similarity,
    };
    let got: Vec<String> = refine(&toolbox, &task, &config, &HashEmbedder::default())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|s| s.name)
        .collect();
    let (order, scores) = oracle(&descriptions, &task);
    let want: Vec<String> = order
        .into_iter()
        .filter(|&i| scores[i] >= min_similarity)
        .take(k.max(1))
        .map(|i| format!("tool{i}"))
        .collect();
    ensure!(got == want, "refiner case {case}: got {got:?}, oracle {want:?}");
    Ok(())
}

fn random_unit(rng: &mut StdRng, name: &str) -> AgentUnit {
    let n = rng.random_range(1..=6);
    let agents = (0..n).map(|i| AgentSpec::new(&format!("{name}a{i}"), &phrase(rng, 2, 8))).collect();
    AgentUnit::new(name, Topology::Joint, agents)
}

fn check_agents(rng: &mut StdRng, case: usize) -> Result<(), String> {
    let unit = random_unit(rng, "u");
    let task = phrase(rng, 2, 8);
    let e = HashEmbedder::default();
    let personas: Vec<String> = unit.agents.iter().map(|a| a.persona.clone()).collect();
    let (order, scores) = oracle(&personas, &task);
    let ranked = rank_agents(&unit, &task, &e).map_err(|e| e.to_string())?;
    let got: Vec<usize> = ranked.iter().map(|(i, _)| *i).collect();
    ensure!(got == order, "agent case {case}: ranked {got:?}, oracle {order:?}");
    for (i, s) in &ranked {
        ensure!((s - scores[*i]).abs() < 1e-9, "agent case {case}: score {s} vs {}", scores[*i]);
    }
    let best = match_semantic(&unit, &task, &e).map_err(|e| e.to_string())?;
    ensure!(best.name == unit.agents[order[0]].name, "agent case {case}: matched {}", best.name);
    Ok(())
}

fn check_units(rng: &mut StdRng, case: usize) -> Result<(), String> {
    let m = rng.random_range(2..=6);
    let units: Vec<AgentUnit> = (0..m).map(|i| random_unit(rng, &format!("unit{i}"))).collect();
    let task = phrase(rng, 2, 8);
    let e = HashEmbedder::default();
    let texts: Vec<String> = units
        .iter()
        .map(|u| u.agents.iter().map(|a| a.persona.as_str()).collect::<Vec<_>>().join("\n"))
        .collect();
    let (order, _) = oracle(&texts, &task);
    let got: Vec<usize> = rank_units(&units, &task, &e).map_err(|e| e.to_string())?.iter().map(|(i, _)| *i).collect();
    ensure!(got == order, "unit case {case}: ranked {got:?}, oracle {order:?}");
    let mut queue = TaskQueue::build(&[TaskSpec::new("t", &task)]).unwrap();
    queue.ready_tasks();
    let t = queue.start_task("t").unwrap();
    let chosen = match_unit(&units, &t, &e).map_err(|e| e.to_string())?;
    ensure!(chosen.name == units[order[0]].name, "unit case {case}: matched {}", chosen.name);

    // a valid hint wins over similarity
    let hinted = &units[rng.random_range(0..m)].name;
    let mut queue = TaskQueue::build(&[TaskSpec::new("t", &task).with_hint(hinted)]).unwrap();
    queue.ready_tasks();
    let t = queue.start_task("t").unwrap();
    let chosen = match_unit(&units, &t, &e).map_err(|e| e.to_string())?;
    ensure!(chosen.name == *hinted, "unit case {case}: hint {hinted} ignored");
    Ok(())
}

pub fn check() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x5e3a);
    for case in 0..INSTANCES {
        check_refiner(&mut rng, case)?;
        check_agents(&mut rng, case)?;
        check_units(&mut rng, case)?;
    }
    Ok(format!("{INSTANCES} instances each for tool refiner, agent matcher and unit matcher"))
}
