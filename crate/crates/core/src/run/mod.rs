//! Transactional pipeline runs and the run registry.
//!
//! A run reads from a snapshot of its target branch, writes every node
//! output to a private `txn/<run_id>` branch and publishes all of them with
//! a single merge into the target. A failed run leaves the target untouched
//! and its transactional branch behind, read-only, for inspection.

mod engine;
pub(crate) mod registry;

use serde::{Deserialize, Serialize};

use crate::catalog::{CommitId, SnapshotId};
use crate::contracts::Diagnostic;

pub use engine::{ActiveRun, StepOutcome};

/// Prefix of every transactional branch name.
pub const TXN_PREFIX: &str = "txn/";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Fault injection: fail this node before it executes.
    #[serde(default)]
    pub fail_at_node: Option<String>,
    #[serde(default)]
    pub allow_branch_from_aborted: bool,
    #[serde(default)]
    pub allow_merge_from_aborted: bool,
    #[serde(default = "yes")]
    pub skip_redundant_checks: bool,
}

fn yes() -> bool {
    true
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            fail_at_node: None,
            allow_branch_from_aborted: false,
            allow_merge_from_aborted: false,
            skip_redundant_checks: true,
        }
    }
}

impl RunOptions {
    pub fn failing_at(node: impl Into<String>) -> Self {
        RunOptions {
            fail_at_node: Some(node.into()),
            ..RunOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Committed,
    Aborted,
    /// Refused before any branch was created.
    Rejected,
}

impl RunStatus {
    pub fn is_final(self) -> bool {
        self != RunStatus::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Committed => "committed",
            RunStatus::Aborted => "aborted",
            RunStatus::Rejected => "rejected",
        }
    }
}

/// What drives a run's nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    /// Nodes evaluate the transforms of an archived manifest.
    Manifest,
    /// Nodes write precomputed snapshots; used to replay model traces.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum NodeOutcome {
    Ok { commit: CommitId, snapshot: SnapshotId },
    Failed { diagnostic: Diagnostic },
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeResult {
    pub node: String,
    #[serde(flatten)]
    pub outcome: NodeOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub kind: RunKind,
    pub target_branch: String,
    /// Commit every read of the run is resolved against.
    pub start_commit: CommitId,
    /// Object id of the archived manifest bytes.
    pub code_hash: String,
    /// `None` only for rejected runs.
    pub txn_branch: Option<String>,
    pub status: RunStatus,
    pub node_results: Vec<NodeResult>,
    pub diagnostics: Vec<Diagnostic>,
    pub options: RunOptions,
    #[serde(default)]
    pub resumed_from: Option<String>,
    #[serde(default)]
    pub reproduces: Option<String>,
    /// Label spans in diagnostics refer to; reused when reproducing.
    #[serde(default)]
    pub manifest_file: Option<String>,
    pub started_at: i64,
    pub finished_at: Option<i64>,
    /// Target head right after publication.
    pub published_head: Option<CommitId>,
}

impl RunRecord {
    pub fn result(&self, node: &str) -> Option<&NodeOutcome> {
        self.node_results.iter().find(|r| r.node == node).map(|r| &r.outcome)
    }

    /// Snapshot written for `node`, if it ran successfully.
    pub fn output(&self, node: &str) -> Option<&SnapshotId> {
        match self.result(node)? {
            NodeOutcome::Ok { snapshot, .. } => Some(snapshot),
            _ => None,
        }
    }

    pub fn failure(&self) -> Option<&Diagnostic> {
        self.node_results.iter().find_map(|r| match &r.outcome {
            NodeOutcome::Failed { diagnostic } => Some(diagnostic),
            _ => None,
        })
    }
}
