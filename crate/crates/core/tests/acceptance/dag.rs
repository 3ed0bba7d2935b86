use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use taskweave_core::queue::{TaskQueue, TaskSpec};

const CASES: usize = 500;

pub fn check() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x00da_6001);
    let mut tasks = 0;
    let mut edges = 0;
    for case in 0..CASES {
        let n = rng.random_range(1..=10);
        let density: f64 = rng.random();
        let mut names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        names.shuffle(&mut rng);
        // an edge only ever points forward in `names`, so the graph is acyclic
        let mut deps: BTreeMap<String, BTreeSet<String>> = names.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        for j in 0..n {
            for i in 0..j {
                if rng.random_bool(density) {
                    deps.get_mut(&names[j]).unwrap().insert(names[i].clone());
                    edges += 1;
                }
            }
        }
        let mut specs: Vec<TaskSpec> = names
            .iter()
            .map(|id| TaskSpec::new(id, format!("task {id}")).after(deps[id].iter().cloned()))
            .collect();
        specs.shuffle(&mut rng);
        let mut queue = TaskQueue::build(&specs).map_err(|e| format!("case {case}: {e}"))?;

        let mut done: BTreeSet<String> = BTreeSet::new();
        let mut started: BTreeSet<String> = BTreeSet::new();
        let mut running: Vec<String> = Vec::new();
        let mut order: Vec<String> = Vec::new();
        loop {
            let ready: BTreeSet<String> = queue.ready_tasks().into_iter().map(|t| t.id).collect();
            let expected: BTreeSet<String> = names
                .iter()
                .filter(|id| !started.contains(*id) && deps[*id].is_subset(&done))
                .cloned()
                .collect();
            ensure!(ready == expected, "case {case}: ready {ready:?}, brute force {expected:?}");
            if ready.is_empty() && running.is_empty() {
                break;
            }
            let mut ready: Vec<String> = ready.into_iter().collect();
            ready.shuffle(&mut rng);
            for id in ready {
                if running.is_empty() || rng.random_bool(0.5) {
                    ensure!(deps[&id].is_subset(&done), "case {case}: {id} started before its dependencies");
                    let task = queue.start_task(&id).map_err(|e| format!("case {case}: {e}"))?;
                    let inputs: BTreeSet<String> = task.dependency_results.keys().cloned().collect();
                    ensure!(inputs == deps[&id], "case {case}: {id} received results of {inputs:?}");
                    for (dep, result) in &task.dependency_results {
                        ensure!(*result == format!("result of {dep}"), "case {case}: wrong result for {dep}");
                    }
                    started.insert(id.clone());
                    running.push(id);
                }
            }
            if !running.is_empty() {
                let id = running.swap_remove(rng.random_range(0..running.len()));
                queue
                    .complete_task(&id, format!("result of {id}"))
                    .map_err(|e| format!("case {case}: {e}"))?;
                done.insert(id.clone());
                order.push(id);
            }
        }
        ensure!(done.len() == n && queue.all_done(), "case {case}: {} of {n} tasks completed", done.len());
        let position: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        for (task, ds) in &deps {
            for d in ds {
                ensure!(position[d.as_str()] < position[task.as_str()], "case {case}: {task} finished before {d}");
            }
        }
        tasks += n;
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{CASES} DAGs, {tasks} tasks, {edges} edges, all orders valid linear extensions"))
}
