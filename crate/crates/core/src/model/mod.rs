//! Explicit-state bounded model checker for the branch and run protocol.
//!
//! The abstract system has commits (table maps with ordered parents),
//! branches with a class, and runs that write a fixed plan of tables one
//! create-only step at a time on a private branch before merging it into
//! their target. States are explored breadth first up to [`Bounds`], so a
//! reported counterexample is a shortest one.

mod explore;
mod render;
mod replay;
mod state;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::catalog::Policy;
use crate::error::{Error, Result};

pub use explore::{
    check, check_with_cap, enumerate, enumerate_with_cap, random_trace, reachable_states, CheckOutcome, Exploration,
    DEFAULT_STATE_CAP,
};
pub use render::{render_state, render_trace};
pub use replay::{replay, replay_fresh, ReplayReport};
pub use state::{Action, BranchName, ModelBranch, ModelCommit, ModelRun, ModelRunStatus, ModelState};
pub use trace::{Trace, TraceStep};

/// Upper limits of the exploration. Commits include the root commit and
/// branches include `main`; every run plans all `max_tables` tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Bounds {
    pub max_tables: usize,
    pub max_snapshots: usize,
    pub max_commits: usize,
    pub max_branches: usize,
    pub max_runs: usize,
    /// Longest action sequence explored.
    pub max_steps: usize,
}

/// Bounds beyond this no longer fit the compact state encoding.
const BOUND_LIMIT: usize = 64;

impl Bounds {
    pub fn new(tables: usize, snapshots: usize, commits: usize, branches: usize, runs: usize, steps: usize) -> Self {
        Bounds {
            max_tables: tables,
            max_snapshots: snapshots,
            max_commits: commits,
            max_branches: branches,
            max_runs: runs,
            max_steps: steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("tables", self.max_tables),
            ("snapshots", self.max_snapshots),
            ("commits", self.max_commits),
            ("branches", self.max_branches),
            ("runs", self.max_runs),
            ("steps", self.max_steps),
        ];
        for (name, v) in all {
            if v == 0 || v > BOUND_LIMIT {
                return Err(Error::InvalidBounds(format!(
                    "{name} must be in 1..={BOUND_LIMIT}, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Bounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "tables={} snapshots={} commits={} branches={} runs={} steps={}",
            self.max_tables, self.max_snapshots, self.max_commits, self.max_branches, self.max_runs, self.max_steps
        )
    }
}

impl FromStr for Bounds {
    type Err = Error;

    /// Parses `tables=3 snapshots=3 ...`; commas may replace spaces.
    fn from_str(s: &str) -> Result<Self> {
        let mut b = Bounds::new(0, 0, 0, 0, 0, 0);
        for part in s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
        {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidBounds(format!("expected key=value, got `{part}`")))?;
            let v: usize = v
                .parse()
                .map_err(|_| Error::InvalidBounds(format!("`{v}` is not a count")))?;
            let slot = match k {
                "tables" => &mut b.max_tables,
                "snapshots" => &mut b.max_snapshots,
                "commits" => &mut b.max_commits,
                "branches" => &mut b.max_branches,
                "runs" => &mut b.max_runs,
                "steps" => &mut b.max_steps,
                _ => return Err(Error::InvalidBounds(format!("unknown bound `{k}`"))),
            };
            *slot = v;
        }
        b.validate()?;
        Ok(b)
    }
}

/// Guardrail settings explored by the checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPolicy {
    /// Aborted branches can be neither branched from nor merged.
    #[serde(rename = "on")]
    GuardrailOn,
    /// Aborted branches can be branched from but not merged directly.
    #[serde(rename = "off")]
    GuardrailOff,
    /// Aborted branches can be branched from and merged.
    Open,
}

impl ModelPolicy {
    pub fn branch_from_aborted(self) -> bool {
        self != ModelPolicy::GuardrailOn
    }

    pub fn merge_from_aborted(self) -> bool {
        self == ModelPolicy::Open
    }

    /// The catalog policy with the same permissions.
    pub fn catalog_policy(self) -> Policy {
        Policy {
            allow_branch_from_aborted: self.branch_from_aborted(),
            allow_merge_from_aborted: self.merge_from_aborted(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelPolicy::GuardrailOn => "on",
            ModelPolicy::GuardrailOff => "off",
            ModelPolicy::Open => "open",
        }
    }
}

impl fmt::Display for ModelPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(ModelPolicy::GuardrailOn),
            "off" => Ok(ModelPolicy::GuardrailOff),
            "open" => Ok(ModelPolicy::Open),
            _ => Err(format!("unknown guardrail setting `{s}` (expected on, off or open)")),
        }
    }
}

/// Properties the checker can verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Invariant {
    /// No normal branch ever holds a run's begin state plus a proper,
    /// nonempty prefix of its outputs.
    PipelineAtomicity,
    /// No commit created on an aborted run's branch is reachable from the
    /// head of that run's target.
    NoAbortedLeak,
    /// Every transition moves at most one existing branch head.
    MergeAtomicity,
}

impl Invariant {
    pub const ALL: [Invariant; 3] = [
        Invariant::PipelineAtomicity,
        Invariant::NoAbortedLeak,
        Invariant::MergeAtomicity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Invariant::PipelineAtomicity => "pipeline_atomicity",
            Invariant::NoAbortedLeak => "no_aborted_leak",
            Invariant::MergeAtomicity => "merge_atomicity",
        }
    }
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Invariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Invariant::ALL
            .into_iter()
            .find(|i| i.as_str() == s)
            .ok_or_else(|| Error::UnknownInvariant(s.to_string()))
    }
}
