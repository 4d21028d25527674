//! Traces and their line-oriented script form.
//!
//! ```text
//! # comments are ignored
//! bounds tables=3 snapshots=3 commits=6 branches=4 runs=2 steps=10
//! policy off
//! begin r1 main
//! step r1
//! fail r1
//! create-branch b1 txn/r1
//! merge b1 main
//! ```

use std::fmt::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::state::{Action, ModelState};
use crate::model::{Bounds, ModelPolicy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceStep {
    pub action: Action,
    /// State after the action, in canonical form.
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trace {
    pub bounds: Bounds,
    pub policy: ModelPolicy,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn empty(bounds: Bounds, policy: ModelPolicy) -> Trace {
        Trace {
            bounds,
            policy,
            steps: Vec::new(),
        }
    }

    pub fn initial_state(&self) -> ModelState {
        ModelState::initial(&self.bounds).canonical()
    }

    pub fn final_state(&self) -> ModelState {
        self.steps
            .last()
            .map(|s| s.state.clone())
            .unwrap_or_else(|| self.initial_state())
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_script(&self) -> String {
        let mut out = String::new();
        writeln!(out, "bounds {}", self.bounds).unwrap();
        writeln!(out, "policy {}", self.policy).unwrap();
        for s in &self.steps {
            writeln!(out, "{}", s.action).unwrap();
        }
        out
    }

    /// Builds a trace from its actions, checking each is enabled. Where an
    /// action has several possible outcomes the first is taken.
    pub fn from_actions(bounds: Bounds, policy: ModelPolicy, actions: &[Action]) -> Result<Trace> {
        bounds.validate()?;
        let mut state = ModelState::initial(&bounds).canonical();
        let mut steps = Vec::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            let next =
                state
                    .successors(a, &bounds, policy)
                    .into_iter()
                    .next()
                    .ok_or_else(|| Error::ActionNotEnabled {
                        step: i + 1,
                        action: a.to_string(),
                    })?;
            steps.push(TraceStep {
                action: *a,
                state: next.clone(),
            });
            state = next;
        }
        Ok(Trace { bounds, policy, steps })
    }

    pub fn parse_script(text: &str) -> Result<Trace> {
        let mut bounds = None;
        let mut policy = None;
        let mut actions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| Error::TraceParse { line: i + 1, message };
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("bounds ") {
                bounds = Some(rest.parse::<Bounds>().map_err(|e| err(e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("policy ") {
                policy = Some(rest.trim().parse::<ModelPolicy>().map_err(err)?);
            } else {
                if bounds.is_none() || policy.is_none() {
                    return Err(err("`bounds` and `policy` must come before the actions".into()));
                }
                actions.push(line.parse::<Action>().map_err(err)?);
            }
        }
        let bounds = bounds.ok_or_else(|| Error::TraceParse {
            line: 0,
            message: "missing `bounds` line".into(),
        })?;
        let policy = policy.ok_or_else(|| Error::TraceParse {
            line: 0,
            message: "missing `policy` line".into(),
        })?;
        Trace::from_actions(bounds, policy, &actions)
    }
}
