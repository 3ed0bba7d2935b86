use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use taskweave_core::agents::{AgentSpec, AgentUnit, Strategy, Topology};
use taskweave_core::backend::{BackendError, ChatRequest, FnBackend};
use taskweave_core::control::{FeedbackEnvelope, FeedbackKind};
use taskweave_core::coordinator::{Engine, Phase, RunOptions, Workflow, WorkflowConfig};
use taskweave_core::event::EventKind;
use taskweave_core::message::Message;

const PLAN: &str = r#"{"tasks": [{"id": "only", "description": "look into the outage", "depends_on": []}]}"#;
const QUIET: Duration = Duration::from_millis(300);
const LIMIT: Duration = Duration::from_secs(10);

fn config(strategy: Strategy) -> WorkflowConfig {
    let unit = AgentUnit::new(
        "solo",
        Topology::Independent,
        vec![AgentSpec::new("Investigator", "You investigate incidents.").with_strategy(strategy)],
    );
    let mut c = WorkflowConfig::new("feedback", vec![unit]);
    c.max_concurrency = 1;
    c.human_timeout_secs = Some(10);
    c
}

/// A backend that answers from `replies` and, on call `hold`, reports in and
/// waits for a go signal.
struct Probe {
    calls: Arc<AtomicUsize>,
    seen: Arc<Mutex<Vec<Vec<Message>>>>,
    reached: Receiver<()>,
    go: Sender<()>,
}

fn probe(replies: Vec<&'static str>, hold: Option<usize>) -> (Probe, FnBackend<impl Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::new(Mutex::new(Vec::new()));
    let (reached_tx, reached) = channel();
    let (go, go_rx) = channel::<()>();
    let (reached_tx, go_rx) = (Mutex::new(reached_tx), Mutex::new(go_rx));
    let (c, s) = (calls.clone(), seen.clone());
    let backend = FnBackend(move |req: &ChatRequest| {
        let i = c.fetch_add(1, Ordering::SeqCst);
        s.lock().unwrap().push(req.messages.clone());
        if Some(i) == hold {
            let _ = reached_tx.lock().unwrap().send(());
            let _ = go_rx.lock().unwrap().recv_timeout(LIMIT);
        }
        Ok(replies.get(i).copied().unwrap_or("true").to_string())
    });
    (Probe { calls, seen, reached, go }, backend)
}

fn model_calls(wf: &Workflow) -> usize {
    wf.events().events().iter().filter(|e| e.kind == EventKind::ModelCall).count()
}

fn incidental() -> Result<String, String> {
    let (p, backend) = probe(vec![PLAN, "Thought: checking the logs", "Thought: t\nFINAL ANSWER: resolved"], Some(1));
    let engine = Engine::new(config(Strategy::react()), Arc::new(backend)).map_err(|e| e.to_string())?;
    let wf = engine.start("investigate the outage", &RunOptions::default());
    let note = "operator note: the disk filled at 02:10";
    let outcome = thread::scope(|s| {
        let driver = s.spawn(|| engine.drive(&wf, &RunOptions::default()));
        let steps = || -> Result<(), String> {
            p.reached.recv_timeout(LIMIT).map_err(|_| "task never reached its first step")?;
            wf.pause().map_err(|e| e.to_string())?;
            wf.inject_feedback(FeedbackEnvelope {
                workflow_id: wf.id().to_string(),
                task_id: Some("only".into()),
                kind: FeedbackKind::IncidentalObservation,
                content: note.into(),
            })
            .map_err(|e| e.to_string())?;
            let _ = p.go.send(());
            thread::sleep(QUIET);
            ensure!(p.calls.load(Ordering::SeqCst) == 2, "model called while paused");
            ensure!(wf.phase() == Phase::Paused, "phase {:?} while paused", wf.phase());
            wf.resume().map_err(|e| e.to_string())
        };
        let r = steps();
        if r.is_err() {
            let _ = p.go.send(());
            wf.cancel();
        }
        let state = driver.join().unwrap();
        r.map(|_| state)
    })?;
    ensure!(outcome.phase == Phase::Done, "ended {:?}: {:?}", outcome.phase, outcome.failure);
    let seen = p.seen.lock().unwrap();
    let last = seen[2].last().ok_or("empty prompt")?;
    ensure!(last.content == format!("Observation: {note}"), "next prompt ended with {:?}", last.content);
    let injected = outcome.event_log.iter().filter(|e| e.kind == EventKind::FeedbackInjected).count();
    ensure!(injected == 1, "{injected} FeedbackInjected events");
    Ok("incidental observation delivered on the next step".into())
}

fn human_proxy() -> Result<String, String> {
    let ask = "Plan: p\nTask Thought: t\nDialog Thought: which region failed?\nNext: @HumanProxy";
    let (p, backend) = probe(vec![PLAN, ask, "Task Thought: t\nFINAL ANSWER: eu-west"], None);
    let engine = Engine::new(config(Strategy::conv_plan_react()), Arc::new(backend)).map_err(|e| e.to_string())?;
    let wf = engine.start("investigate the outage", &RunOptions::default());
    let outcome = thread::scope(|s| {
        let driver = s.spawn(|| engine.drive(&wf, &RunOptions::default()));
        let steps = || -> Result<(), String> {
            let mut from = 0;
            let request = loop {
                let batch = wf.events().wait_since(from, LIMIT);
                ensure!(!batch.is_empty(), "no HumanRequested event");
                from = batch.last().unwrap().sequence_no + 1;
                if let Some(e) = batch.into_iter().find(|e| e.kind == EventKind::HumanRequested) {
                    break e;
                }
            };
            ensure!(request.payload["question"].as_str().unwrap_or_default().contains("which region failed?"), "question lost");
            let before = model_calls(&wf);
            thread::sleep(QUIET);
            ensure!(model_calls(&wf) == before && before == 2, "model called while waiting for a human");
            ensure!(wf.feedback().outstanding() == ["only"], "outstanding {:?}", wf.feedback().outstanding());
            wf.inject_feedback(FeedbackEnvelope {
                workflow_id: wf.id().to_string(),
                task_id: None,
                kind: FeedbackKind::HumanProxyResponse,
                content: "eu-west".into(),
            })
            .map_err(|e| e.to_string())?;
            Ok(())
        };
        let r = steps();
        if r.is_err() {
            wf.cancel();
        }
        let state = driver.join().unwrap();
        r.map(|_| state)
    })?;
    ensure!(outcome.phase == Phase::Done, "ended {:?}: {:?}", outcome.phase, outcome.failure);
    let seen = p.seen.lock().unwrap();
    let last = seen[2].last().ok_or("empty prompt")?;
    ensure!(last.content == "Observation: eu-west", "next prompt ended with {:?}", last.content);
    let kinds: Vec<EventKind> = outcome.event_log.iter().map(|e| e.kind).collect();
    let asked = kinds.iter().position(|k| *k == EventKind::HumanRequested).unwrap();
    let answered = kinds.iter().position(|k| *k == EventKind::HumanResponded).ok_or("no HumanResponded event")?;
    let calls_between = kinds[asked..answered].iter().filter(|k| **k == EventKind::ModelCall).count();
    ensure!(calls_between == 0, "{calls_between} model calls while the task was blocked");
    Ok("human proxy blocked the task until answered".into())
}

pub fn check() -> Result<String, String> {
    let a = incidental()?;
    let b = human_proxy()?;
    Ok(format!("{a}; {b}"))
}
