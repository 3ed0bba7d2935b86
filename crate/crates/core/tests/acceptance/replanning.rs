use std::sync::Arc;

use taskweave_core::agents::{AgentSpec, AgentUnit, Strategy, Topology};
use taskweave_core::backend::{ScriptEntry, ScriptedBackend};
use taskweave_core::coordinator::{Engine, Phase, RunOptions, WorkflowConfig};
use taskweave_core::event::EventKind;

const PLAN: &str = r#"{"tasks": [{"id": "only", "description": "answer the question", "depends_on": []}]}"#;

fn config(max_replans: usize) -> WorkflowConfig {
    let unit = AgentUnit::new(
        "solo",
        Topology::Independent,
        vec![AgentSpec::new("Writer", "You write short answers.").with_strategy(Strategy::react())],
    );
    let mut c = WorkflowConfig::new("replan", vec![unit]);
    c.max_replans = max_replans;
    c.max_concurrency = 1;
    c
}

/// `rejections` false verdicts, then a passing one.
fn script(rejections: usize) -> Vec<ScriptEntry> {
    (0..=rejections)
        .flat_map(|i| {
            let verdict = if i < rejections {
                format!(r#"{{"verdict": false, "reason": "missing detail r{i}"}}"#)
            } else {
                r#"{"verdict": true, "reason": "complete"}"#.to_string()
            };
            [
                ScriptEntry::new(Some("Decompose"), PLAN),
                ScriptEntry::new(Some("answer the question"), format!("Thought: t\nFINAL ANSWER: attempt {i}")),
                ScriptEntry::new(Some("Result:"), verdict),
            ]
        })
        .collect()
}

pub fn check() -> Result<String, String> {
    let mut cases = 0;
    for max in 0..=3 {
        for rejections in 0..=max + 1 {
            let backend = Arc::new(ScriptedBackend::new(script(rejections)));
            let engine = Engine::new(config(max), backend.clone()).map_err(|e| e.to_string())?;
            let state = engine.run("answer the question well", &RunOptions::default());
            let rounds = rejections.min(max + 1);
            let label = format!("max_replans={max} rejections={rejections}");
            if rejections <= max {
                ensure!(state.phase == Phase::Done, "{label}: ended {:?}", state.phase);
                ensure!(state.replan_count == rejections, "{label}: {} replans", state.replan_count);
                ensure!(state.final_result.as_deref() == Some(format!("attempt {rejections}").as_str()), "{label}: wrong result");
            } else {
                ensure!(state.phase == Phase::Failed, "{label}: ended {:?}", state.phase);
                ensure!(state.replan_count == max, "{label}: {} replans", state.replan_count);
                ensure!(state.verdict == Some(false), "{label}: verdict {:?}", state.verdict);
            }
            let calls = backend.transcript();
            let expected_calls = 3 * (rounds.min(max) + 1);
            ensure!(calls.len() == expected_calls, "{label}: {} model calls, expected {expected_calls}", calls.len());
            let plans = calls.iter().filter(|x| x.prompt.contains("Decompose")).count();
            ensure!(plans == state.replan_count + 1, "{label}: planner ran {plans} times");
            for i in 1..plans {
                let prompt = &calls[3 * i].prompt;
                ensure!(prompt.contains(&format!("attempt {}", i - 1)), "{label}: replanner missed rejected result {}", i - 1);
                ensure!(prompt.contains(&format!("missing detail r{}", i - 1)), "{label}: replanner missed reason {}", i - 1);
            }
            let verdicts = state.event_log.iter().filter(|e| e.kind == EventKind::VerdictIssued).count();
            ensure!(verdicts == state.replan_count + 1, "{label}: {verdicts} verdicts");
            cases += 1;
        }
    }
    Ok(format!("{cases} verdict sequences, replans bounded by max_replans"))
}
