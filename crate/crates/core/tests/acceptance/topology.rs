use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use taskweave_core::agents::{AgentSpec, AgentUnit, ObservationSource, Strategy, Topology};
use taskweave_core::agents::{MatcherConfig, MatcherKind};
use taskweave_core::backend::HashEmbedder;
use taskweave_core::event::EventKind;

use crate::common::{cosine, echo_action, phrase, run_unit, stable_rank, UnitRun};

const PER_TOPOLOGY: usize = 50;
const NAMES: [&str; 4] = ["Alpha", "Bravo", "Charlie", "Delta"];

struct Case {
    unit: AgentUnit,
    description: String,
    responses: Vec<String>,
}

type Generator = fn(&mut StdRng, &mut Tokens) -> Case;

struct Tokens(usize);

impl Tokens {
    fn next(&mut self) -> String {
        self.0 += 1;
        format!("tok{}", self.0)
    }
}

fn conv(tok: &str, next: &str, action: bool) -> String {
    let mut s = format!(
        "Plan: private plan {tok}\nTask Thought: private thought {tok}\nDialog Thought: shared note {tok}\nNext: {next}"
    );
    if action {
        s.push_str(&format!("\nAction: {}", echo_action(tok)));
    }
    s
}

fn conv_final(tok: &str) -> String {
    format!("Task Thought: private thought {tok}\nFINAL ANSWER: answer {tok}")
}

fn agents(rng: &mut StdRng, n: usize, strategy: Strategy) -> Vec<AgentSpec> {
    NAMES[..n]
        .iter()
        .map(|name| {
            AgentSpec::new(name, &format!("You are {name}. You handle {}.", phrase(rng, 2, 6)))
                .with_strategy(strategy.clone())
                .with_tools(["echo"])
        })
        .collect()
}

fn independent(rng: &mut StdRng, tok: &mut Tokens) -> Case {
    let n = rng.random_range(1..=3);
    let unit = AgentUnit::new("solo", Topology::Independent, agents(rng, n, Strategy::react()));
    let mut responses = Vec::new();
    for _ in 0..rng.random_range(0..=3) {
        let t = tok.next();
        responses.push(format!("Thought: private {t}\nAction: {}", echo_action(&t)));
    }
    responses.push(format!("Thought: done\nFINAL ANSWER: answer {}", tok.next()));
    Case {
        unit,
        description: phrase(rng, 3, 8),
        responses,
    }
}

fn sequential(rng: &mut StdRng, tok: &mut Tokens) -> Case {
    let n = rng.random_range(2..=3);
    let mut members = agents(rng, n, Strategy::react());
    for a in members.iter_mut() {
        if rng.random_bool(0.3) {
            a.may_terminate = Some(false);
        }
        if rng.random_bool(0.5) {
            a.tools.clear();
        }
    }
    if members.iter().all(|a| a.may_terminate == Some(false)) {
        members[0].may_terminate = None;
    }
    let mut sequence: Vec<String> = members.iter().map(|a| a.name.clone()).collect();
    sequence.shuffle(rng);
    let spec = |name: &str| members.iter().find(|a| a.name == name).unwrap().clone();
    let can_end = |name: &str| spec(name).may_terminate != Some(false);
    let mut steps = rng.random_range(1..=8);
    while !can_end(&sequence[(steps - 1) % n]) {
        steps += 1;
    }
    let mut responses = Vec::new();
    for i in 0..steps - 1 {
        let t = tok.next();
        let who = &sequence[i % n];
        let r = if !can_end(who) && rng.random_bool(0.3) {
            format!("Thought: premature {t}\nFINAL ANSWER: not yet {t}")
        } else if spec(who).tools.is_empty() {
            format!("Thought: note {t}")
        } else {
            format!("Thought: note {t}\nAction: {}", echo_action(&t))
        };
        responses.push(r);
    }
    responses.push(format!("Thought: no further edits\nFINAL ANSWER: answer {}", tok.next()));
    let unit = AgentUnit::new("seq", Topology::Sequential, members)
        .with_sequence(sequence)
        .with_matcher(MatcherConfig::new(MatcherKind::Iterative));
    Case {
        unit,
        description: phrase(rng, 3, 8),
        responses,
    }
}

fn semantic_start(unit: &AgentUnit, description: &str) -> String {
    let e = HashEmbedder::default();
    let q = e.embed_text(description);
    let scores: Vec<f64> = unit.agents.iter().map(|a| cosine(&e.embed_text(&a.persona), &q)).collect();
    unit.agents[stable_rank(&scores)[0]].name.clone()
}

fn joint(rng: &mut StdRng, tok: &mut Tokens) -> Case {
    let members = agents(rng, 3, Strategy::conv_plan_react());
    let names: Vec<String> = members.iter().map(|a| a.name.clone()).collect();
    let unit = AgentUnit::new("joint", Topology::Joint, members)
        .with_matcher(MatcherConfig::composite(vec![MatcherKind::Mention, MatcherKind::Semantic]));
    let description = phrase(rng, 3, 8);
    let mut current = semantic_start(&unit, &description);
    let mut responses = Vec::new();
    for _ in 0..rng.random_range(0..=7) {
        let t = tok.next();
        if rng.random_bool(0.35) {
            responses.push(conv(&t, "@Self", true));
        } else {
            let others: Vec<&String> = names.iter().filter(|n| **n != current).collect();
            let next = (*others.choose(rng).unwrap()).clone();
            responses.push(conv(&t, &format!("@{next}"), false));
            current = next;
        }
    }
    responses.push(conv_final(&tok.next()));
    Case {
        unit,
        description,
        responses,
    }
}

fn hierarchical(rng: &mut StdRng, tok: &mut Tokens) -> Case {
    let n = rng.random_range(2..=4);
    let mut members = agents(rng, n, Strategy::conv_plan_react());
    members[0] = members[0].clone().lead();
    let lead = members[0].name.clone();
    let others: Vec<String> = members[1..].iter().map(|a| a.name.clone()).collect();
    let mut responses = Vec::new();
    for _ in 0..rng.random_range(0..=4) {
        let t = tok.next();
        if rng.random_bool(0.25) {
            responses.push(conv(&t, "@Self", true));
            continue;
        }
        let member = others.choose(rng).unwrap();
        responses.push(conv(&t, &format!("@{member}"), false));
        let m = tok.next();
        responses.push(match rng.random_range(0..3) {
            0 => conv_final(&m),
            1 => conv(&m, "@Self", true),
            _ => conv(&m, &format!("@{lead}"), false),
        });
    }
    responses.push(conv_final(&tok.next()));
    Case {
        unit: AgentUnit::new("tree", Topology::Hierarchical, members).with_max_iterations(64),
        description: phrase(rng, 3, 8),
        responses,
    }
}

fn broadcast(rng: &mut StdRng, tok: &mut Tokens) -> Case {
    let n = rng.random_range(3..=4);
    let mut members = agents(rng, n, Strategy::react());
    members[0] = members[0].clone().with_strategy(Strategy::conv_plan_react()).lead();
    for m in &mut members[1..] {
        m.tools.clear();
    }
    let addressee = members[1].name.clone();
    let mut responses = Vec::new();
    for _ in 0..rng.random_range(0..=3) {
        if rng.random_bool(0.3) {
            responses.push(conv(&tok.next(), "@Self", true));
        }
        responses.push(conv(&tok.next(), &format!("@{addressee}"), false));
        for _ in 1..n {
            let m = tok.next();
            responses.push(if rng.random_bool(0.2) {
                format!("Thought: done {m}\nFINAL ANSWER: reply {m}")
            } else {
                format!("Thought: reply {m}")
            });
        }
    }
    responses.push(conv_final(&tok.next()));
    Case {
        unit: AgentUnit::new("fan", Topology::Broadcast, members).with_max_iterations(64),
        description: phrase(rng, 3, 8),
        responses,
    }
}

fn mention_target(next: &str, current: &str) -> String {
    let name = next.trim_start_matches('@');
    if name.eq_ignore_ascii_case("self") {
        current.to_string()
    } else {
        name.to_string()
    }
}

fn is_lead(unit: &AgentUnit, name: &str) -> bool {
    unit.agent(name).is_some_and(|a| a.is_lead)
}

/// Topology assertions on a finished run, written against the trace only.
fn contract(case: &Case, run: &UnitRun) -> Result<(), String> {
    let unit = &case.unit;
    let trace = &run.outcome.trace;
    let steps = &trace.steps;
    let agents = trace.agents();
    ensure!(run.outcome.result.is_ok(), "task failed: {:?}", run.outcome.result);
    ensure!(!steps.is_empty(), "empty trace");
    ensure!(steps.len() == run.exchanges.len(), "{} steps but {} model calls", steps.len(), run.exchanges.len());
    let selected = run.events.iter().filter(|e| e.kind == EventKind::AgentSelected).count();
    ensure!(selected == steps.len(), "{selected} AgentSelected events for {} steps", steps.len());
    let last = steps.last().unwrap();
    ensure!(last.summary.terminal, "last step is not terminal");
    ensure!(trace.terminated_by.as_deref() == Some(last.agent.as_str()), "terminated_by {:?}", trace.terminated_by);
    let ender = unit.agent(&last.agent).unwrap();
    ensure!(ender.can_terminate(unit.topology), "{} may not terminate", last.agent);
    for s in &steps[..steps.len() - 1] {
        if s.summary.terminal {
            let a = unit.agent(&s.agent).unwrap();
            ensure!(!a.can_terminate(unit.topology), "run continued after {} terminated", s.agent);
        }
    }

    match unit.topology {
        Topology::Independent => {
            let distinct: BTreeSet<&str> = agents.iter().copied().collect();
            ensure!(distinct.len() == 1, "independent run used {distinct:?}");
        }
        Topology::Sequential => {
            let seq = unit.effective_sequence();
            for (i, a) in agents.iter().enumerate() {
                ensure!(*a == seq[i % seq.len()], "step {i} by {a}, sequence says {}", seq[i % seq.len()]);
            }
        }
        Topology::Joint => {
            let start = semantic_start(unit, &case.description);
            ensure!(agents[0] == start, "joint started with {}, best match is {start}", agents[0]);
            for i in 1..steps.len() {
                let prev = &steps[i - 1];
                let next = prev.summary.next.as_deref().ok_or(format!("step {} has no Next", i - 1))?;
                let want = mention_target(next, &prev.agent);
                ensure!(agents[i] == want, "step {i} by {}, mention asked for {want}", agents[i]);
            }
        }
        Topology::Hierarchical => {
            ensure!(is_lead(unit, agents[0]), "first step by non-lead {}", agents[0]);
            ensure!(is_lead(unit, agents[agents.len() - 1]), "last step by non-lead");
            for i in 0..steps.len() {
                if !is_lead(unit, agents[i]) {
                    ensure!(i > 0 && is_lead(unit, agents[i - 1]), "non-lead step {i} not preceded by lead");
                    ensure!(i + 1 < steps.len() && is_lead(unit, agents[i + 1]), "non-lead step {i} not followed by lead");
                    let asked = steps[i - 1].summary.next.as_deref().unwrap_or_default();
                    ensure!(mention_target(asked, agents[i - 1]) == agents[i], "step {i} by {} but lead asked {asked}", agents[i]);
                }
            }
        }
        Topology::Broadcast => {
            let members: BTreeSet<&str> = unit.agents.iter().filter(|a| !a.is_lead).map(|a| a.name.as_str()).collect();
            ensure!(is_lead(unit, agents[0]), "first step by non-lead");
            let mut i = 0;
            let mut round = 0;
            while i < steps.len() {
                ensure!(is_lead(unit, agents[i]), "step {i} by {} where a lead step was due", agents[i]);
                let lead_step = &steps[i];
                i += 1;
                if lead_step.summary.terminal {
                    ensure!(i == steps.len(), "steps after the lead's final answer");
                    break;
                }
                if lead_step.observation == Some(ObservationSource::Tool) {
                    continue;
                }
                round += 1;
                let replies: Vec<usize> = (i..steps.len()).take_while(|&j| !is_lead(unit, agents[j])).collect();
                let who: BTreeSet<&str> = replies.iter().map(|&j| agents[j]).collect();
                ensure!(replies.len() == members.len() && who == members, "round {round} replies from {who:?}");
                let fan_out = run.exchanges[i - 1]
                    .response
                    .lines()
                    .find_map(|l| l.strip_prefix("Dialog Thought: "))
                    .ok_or(format!("lead step {} has no dialog thought", i - 1))?;
                let reply_of = |k: usize| run.exchanges[k].response.lines().last().unwrap().rsplit_once(": ").unwrap().1.to_string();
                for &j in &replies {
                    ensure!(steps[j].round == Some(round), "reply {j} tagged round {:?}", steps[j].round);
                    ensure!(run.exchanges[j].prompt.contains(fan_out), "round {round}: {} did not get the message", agents[j]);
                    for &k in replies.iter().filter(|&&k| k != j) {
                        let other = reply_of(k);
                        for later in (j..steps.len()).filter(|&x| agents[x] == agents[j]) {
                            ensure!(!run.exchanges[later].prompt.contains(&other), "{} saw {}'s reply", agents[j], agents[k]);
                        }
                    }
                }
                i += replies.len();
            }
        }
    }

    // each agent's prompts never carry another agent's private stages
    for (i, x) in run.exchanges.iter().enumerate() {
        for (j, y) in run.exchanges.iter().enumerate() {
            if agents[i] == agents[j] {
                continue;
            }
            for line in y.response.lines().filter(|l| l.starts_with("Plan:") || l.starts_with("Task Thought:")) {
                let private = line.split_once(": ").unwrap().1;
                ensure!(!x.prompt.contains(private), "{} saw private text of {}", agents[i], agents[j]);
            }
        }
    }
    Ok(())
}

pub fn check() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x7090);
    let mut tok = Tokens(0);
    let generators: [(&str, Generator); 5] = [
        ("independent", independent),
        ("sequential", sequential),
        ("joint", joint),
        ("hierarchical", hierarchical),
        ("broadcast", broadcast),
    ];
    let mut steps = 0;
    for (name, generate) in generators {
        for i in 0..PER_TOPOLOGY {
            let case = generate(&mut rng, &mut tok);
            case.unit.validate().map_err(|e| format!("{name} #{i}: {e}"))?;
            let run = run_unit(&case.unit, &case.description, &case.responses);
            contract(&case, &run).map_err(|e| format!("{name} #{i}: {e}"))?;
            steps += run.outcome.trace.steps.len();
        }
    }
    Ok(format!("5 topologies x {PER_TOPOLOGY} fixtures, {steps} steps, 0 violations"))
}
