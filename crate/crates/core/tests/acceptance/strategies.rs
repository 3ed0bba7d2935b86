use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use taskweave_core::agents::{AgentSpec, AgentUnit, Strategy, Topology};

use crate::common::{echo_action, phrase, run_unit};

const FIXTURES: usize = 20;

fn unit(strategy: Strategy, tools: bool) -> AgentUnit {
    let mut agent = AgentSpec::new("Solver", "You solve tasks step by step.").with_strategy(strategy);
    if tools {
        agent = agent.with_tools(["echo"]);
    }
    AgentUnit::new("solo", Topology::Independent, vec![agent])
}

/// Scripted replies for one fixture; `plan` prefixes each with a Plan stage.
/// Without tools the agent only thinks between steps.
fn script(rng: &mut StdRng, plan: bool, tools: bool) -> Vec<String> {
    let steps = rng.random_range(0..=4);
    let mut out = Vec::new();
    for i in 0..steps {
        let head = if plan { format!("Plan: {}\n", phrase(rng, 2, 5)) } else { String::new() };
        let thought = phrase(rng, 3, 8);
        if tools {
            out.push(format!("{head}Thought: {thought}\nAction: {}", echo_action(&format!("step {i} {}", phrase(rng, 1, 3)))));
        } else {
            out.push(format!("{head}Thought: {thought}"));
        }
    }
    let head = if plan { format!("Plan: {}\n", phrase(rng, 2, 5)) } else { String::new() };
    out.push(format!("{head}Thought: done\nFINAL ANSWER: {}", phrase(rng, 2, 6)));
    out
}

pub fn check() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x5747);
    let pairs = [
        ("ReAct", Strategy::react(), Strategy::programmable(&["Thought", "Action", "Observation"]).unwrap(), false),
        (
            "PlanReAct",
            Strategy::plan_react(),
            Strategy::programmable(&["Plan", "Thought", "Action", "Observation"]).unwrap(),
            true,
        ),
    ];
    let mut calls = 0;
    for f in 0..FIXTURES {
        let description = phrase(&mut rng, 4, 9);
        for (name, preset, programmable, plan) in &pairs {
            let tools = rng.random_bool(0.75);
            let responses = script(&mut rng, *plan, tools);
            let a = run_unit(&unit(preset.clone(), tools), &description, &responses);
            let b = run_unit(&unit(programmable.clone(), tools), &description, &responses);
            ensure!(a.outcome.result.is_ok(), "fixture {f} {name}: {:?}", a.outcome.result);
            ensure!(a.outcome.result == b.outcome.result, "fixture {f} {name}: results differ");
            ensure!(a.exchanges.len() == responses.len(), "fixture {f} {name}: {} calls", a.exchanges.len());
            ensure!(a.exchanges.len() == b.exchanges.len(), "fixture {f} {name}: call counts differ");
            for (i, (x, y)) in a.exchanges.iter().zip(&b.exchanges).enumerate() {
                ensure!(x.prompt.as_bytes() == y.prompt.as_bytes(), "fixture {f} {name}: prompt {i} differs");
                ensure!(x.response == y.response, "fixture {f} {name}: response {i} differs");
            }
            calls += a.exchanges.len();
        }
    }
    Ok(format!("{FIXTURES} fixtures x 2 strategies, {calls} prompts byte-identical"))
}
