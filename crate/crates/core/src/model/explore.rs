//! Breadth-first exploration, invariant checking and random walks.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::state::{Action, ModelState};
use crate::model::trace::{Trace, TraceStep};
use crate::model::{Bounds, Invariant, ModelPolicy};

pub const DEFAULT_STATE_CAP: usize = 10_000_000;

/// Summary of an exhaustive exploration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exploration {
    pub bounds: Bounds,
    pub policy: ModelPolicy,
    /// Distinct reachable states, up to renaming of commits and snapshots.
    pub states: usize,
    pub transitions: usize,
    /// New states first reached at each depth; index 0 is the initial state.
    pub per_depth: Vec<usize>,
    /// States at the step limit that still have enabled actions.
    pub frontier_at_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum CheckOutcome {
    /// The invariant holds in every state within the bounds.
    Ok {
        states: usize,
        transitions: usize,
    },
    Counterexample {
        violation: String,
        trace: Trace,
    },
}

impl CheckOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, CheckOutcome::Ok { .. })
    }

    pub fn trace(&self) -> Option<&Trace> {
        match self {
            CheckOutcome::Counterexample { trace, .. } => Some(trace),
            CheckOutcome::Ok { .. } => None,
        }
    }
}

struct Graph {
    states: Vec<ModelState>,
    parent: Vec<Option<(u32, Action)>>,
    index: HashMap<ModelState, u32>,
}

impl Graph {
    fn path_to(&self, mut i: u32) -> Vec<TraceStep> {
        let mut steps = Vec::new();
        while let Some((p, action)) = self.parent[i as usize] {
            steps.push(TraceStep {
                action,
                state: self.states[i as usize].clone(),
            });
            i = p;
        }
        steps.reverse();
        steps
    }
}

enum Stop {
    State(u32, String),
    Edge(u32, Action, ModelState, String),
}

struct Run {
    graph: Graph,
    transitions: usize,
    per_depth: Vec<usize>,
    frontier_at_limit: usize,
    stop: Option<Stop>,
}

fn state_violation(inv: Invariant, s: &ModelState, bounds: &Bounds) -> Option<String> {
    match inv {
        Invariant::NoAbortedLeak => s
            .aborted_leaks()
            .first()
            .map(|(c, target)| format!("commit c{c} created on an aborted branch is reachable from {target}")),
        Invariant::PipelineAtomicity => s.partial_publications(bounds).first().map(|(b, r, k)| {
            format!(
                "{b} holds the begin state of r{} plus only its first {k} of {} outputs",
                r + 1,
                bounds.max_tables
            )
        }),
        Invariant::MergeAtomicity => None,
    }
}

fn edge_violation(inv: Invariant, from: &ModelState, raw_next: &ModelState) -> Option<String> {
    if inv != Invariant::MergeAtomicity {
        return None;
    }
    let moved = from.moved_heads(raw_next);
    (moved.len() > 1).then(|| {
        let names: Vec<String> = moved.iter().map(|b| b.to_string()).collect();
        format!("one transition moved the heads of {}", names.join(", "))
    })
}

fn explore(bounds: &Bounds, policy: ModelPolicy, cap: usize, inv: Option<Invariant>) -> Result<Run> {
    bounds.validate()?;
    let init = ModelState::initial(bounds).canonical();
    let mut graph = Graph {
        states: vec![init.clone()],
        parent: vec![None],
        index: HashMap::from([(init.clone(), 0)]),
    };
    let mut run = Run {
        graph: Graph {
            states: Vec::new(),
            parent: Vec::new(),
            index: HashMap::new(),
        },
        transitions: 0,
        per_depth: vec![1],
        frontier_at_limit: 0,
        stop: None,
    };
    if let Some(msg) = inv.and_then(|i| state_violation(i, &init, bounds)) {
        run.stop = Some(Stop::State(0, msg));
        run.graph = graph;
        return Ok(run);
    }
    let mut level: Vec<u32> = vec![0];
    for depth in 0..=bounds.max_steps {
        if level.is_empty() {
            break;
        }
        if depth == bounds.max_steps {
            run.frontier_at_limit = level
                .iter()
                .filter(|&&i| !graph.states[i as usize].enabled_actions(bounds, policy).is_empty())
                .count();
            break;
        }
        let mut next_level = Vec::new();
        for &i in &level {
            let state = graph.states[i as usize].clone();
            for action in state.candidate_actions(bounds) {
                for raw in state.raw_successors(&action, bounds, policy) {
                    run.transitions += 1;
                    if let Some(msg) = inv.and_then(|v| edge_violation(v, &state, &raw)) {
                        run.stop = Some(Stop::Edge(i, action, raw.canonical(), msg));
                        run.graph = graph;
                        return Ok(run);
                    }
                    let next = raw.canonical();
                    if graph.index.contains_key(&next) {
                        continue;
                    }
                    let id = graph.states.len() as u32;
                    if graph.states.len() >= cap {
                        return Err(Error::BoundsTooLarge { cap });
                    }
                    graph.index.insert(next.clone(), id);
                    graph.states.push(next);
                    graph.parent.push(Some((i, action)));
                    next_level.push(id);
                    if let Some(msg) = inv.and_then(|v| state_violation(v, &graph.states[id as usize], bounds)) {
                        run.stop = Some(Stop::State(id, msg));
                        run.graph = graph;
                        return Ok(run);
                    }
                }
            }
        }
        if !next_level.is_empty() {
            run.per_depth.push(next_level.len());
        }
        level = next_level;
    }
    run.graph = graph;
    Ok(run)
}

/// Exhaustively enumerates the states reachable within `bounds`.
pub fn enumerate(bounds: &Bounds, policy: ModelPolicy) -> Result<Exploration> {
    enumerate_with_cap(bounds, policy, DEFAULT_STATE_CAP)
}

pub fn enumerate_with_cap(bounds: &Bounds, policy: ModelPolicy, cap: usize) -> Result<Exploration> {
    let run = explore(bounds, policy, cap, None)?;
    Ok(Exploration {
        bounds: *bounds,
        policy,
        states: run.graph.states.len(),
        transitions: run.transitions,
        per_depth: run.per_depth,
        frontier_at_limit: run.frontier_at_limit,
    })
}

/// Every reachable state, in canonical form.
pub fn reachable_states(bounds: &Bounds, policy: ModelPolicy) -> Result<HashSet<ModelState>> {
    let run = explore(bounds, policy, DEFAULT_STATE_CAP, None)?;
    Ok(run.graph.states.into_iter().collect())
}

/// Checks `invariant` in every reachable state (and, for
/// [`Invariant::MergeAtomicity`], every transition). A counterexample is a
/// shortest violating trace.
pub fn check(invariant: Invariant, bounds: &Bounds, policy: ModelPolicy) -> Result<CheckOutcome> {
    check_with_cap(invariant, bounds, policy, DEFAULT_STATE_CAP)
}

pub fn check_with_cap(invariant: Invariant, bounds: &Bounds, policy: ModelPolicy, cap: usize) -> Result<CheckOutcome> {
    let run = explore(bounds, policy, cap, Some(invariant))?;
    let (steps, violation) = match run.stop {
        None => {
            return Ok(CheckOutcome::Ok {
                states: run.graph.states.len(),
                transitions: run.transitions,
            })
        }
        Some(Stop::State(i, msg)) => (run.graph.path_to(i), msg),
        Some(Stop::Edge(i, action, state, msg)) => {
            let mut steps = run.graph.path_to(i);
            steps.push(TraceStep { action, state });
            (steps, msg)
        }
    };
    Ok(CheckOutcome::Counterexample {
        violation,
        trace: Trace {
            bounds: *bounds,
            policy,
            steps,
        },
    })
}

/// A random walk of at most `len` enabled actions.
pub fn random_trace(bounds: &Bounds, policy: ModelPolicy, len: usize, rng: &mut impl Rng) -> Result<Trace> {
    bounds.validate()?;
    let mut state = ModelState::initial(bounds).canonical();
    let mut steps = Vec::new();
    for _ in 0..len {
        let actions = state.enabled_actions(bounds, policy);
        let Some(action) = actions.choose(rng).copied() else {
            break;
        };
        let next = state
            .successors(&action, bounds, policy)
            .choose(rng)
            .cloned()
            .expect("enabled actions have successors");
        steps.push(TraceStep {
            action,
            state: next.clone(),
        });
        state = next;
    }
    Ok(Trace {
        bounds: *bounds,
        policy,
        steps,
    })
}
