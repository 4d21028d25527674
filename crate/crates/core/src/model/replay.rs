//! Executes model traces against a real repository and compares the
//! concrete branches with the abstract ones after every action.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::catalog::{BranchClass, Ref, Repo, RepoOptions, SnapshotId};
use crate::contracts::SchemaContract;
use crate::error::{Error, Result};
use crate::model::state::{Action, BranchName, ModelState};
use crate::model::trace::Trace;
use crate::run::{ActiveRun, RunOptions, RunStatus, StepOutcome};
use crate::table::TableSnapshot;
use crate::types::{BaseType, ColumnType, Value};

/// Class and table map of every concrete branch.
type Concrete = BTreeMap<String, (BranchClass, BTreeMap<String, SnapshotId>)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub steps: usize,
    /// Concrete run id of each model run, in model order.
    pub run_ids: Vec<String>,
    /// Final concrete table map of every branch.
    pub branches: BTreeMap<String, BTreeMap<String, SnapshotId>>,
    /// Final concrete class of every branch.
    pub classes: BTreeMap<String, BranchClass>,
}

struct Replayer<'r> {
    repo: &'r Repo,
    trace: &'r Trace,
    runs: Vec<Option<ActiveRun<'r>>>,
    run_ids: Vec<String>,
    txn_names: Vec<String>,
    next_value: i64,
}

fn table_name(t: usize) -> String {
    format!("t{t}")
}

impl<'r> Replayer<'r> {
    fn concrete(&self, b: BranchName) -> String {
        match b {
            BranchName::Txn(r) => self.txn_names.get(r as usize).cloned().unwrap_or_else(|| b.to_string()),
            _ => b.to_string(),
        }
    }

    /// A one-row table no other action produces.
    fn fresh_snapshot(&mut self) -> TableSnapshot {
        self.next_value += 1;
        let schema = SchemaContract::of("ModelTable", &[("v", ColumnType::required(BaseType::Int64))]);
        TableSnapshot::from_rows(schema, vec![vec![Value::Int(self.next_value)]]).expect("one column, one value")
    }

    fn run_options(&self) -> RunOptions {
        let p = self.trace.policy.catalog_policy();
        RunOptions {
            allow_branch_from_aborted: p.allow_branch_from_aborted,
            allow_merge_from_aborted: p.allow_merge_from_aborted,
            ..RunOptions::default()
        }
    }

    fn take_run(&mut self, step: usize, r: u8, action: &Action) -> Result<ActiveRun<'r>> {
        self.runs
            .get_mut(r as usize)
            .and_then(Option::take)
            .ok_or_else(|| Error::ActionNotEnabled {
                step,
                action: action.to_string(),
            })
    }

    fn apply(&mut self, step: usize, action: &Action) -> Result<()> {
        let policy = self.trace.policy.catalog_policy();
        let diverged = |actual: String| Error::Divergence {
            step,
            expected: format!("`{action}` succeeds"),
            actual,
        };
        match *action {
            Action::CreateTable { branch, table } => {
                let name = self.concrete(branch);
                let snap = self.fresh_snapshot();
                let head = self.repo.branch(&name)?.head;
                self.repo
                    .write_table(&name, &table_name(table as usize), &snap, &head)
                    .map_err(|e| diverged(e.to_string()))?;
            }
            Action::CreateBranch { name, from } => {
                let from = Ref::branch(self.concrete(from));
                self.repo
                    .create_branch_with_policy(&name.to_string(), &from, BranchClass::Normal, policy)
                    .map_err(|e| diverged(e.to_string()))?;
            }
            Action::Begin { run, branch } => {
                let outputs = (0..self.trace.bounds.max_tables)
                    .map(|t| (table_name(t), self.fresh_snapshot()))
                    .collect();
                let active = self
                    .repo
                    .begin_fixed_run(&self.concrete(branch), outputs, self.run_options())
                    .map_err(|e| diverged(e.to_string()))?;
                debug_assert_eq!(run as usize, self.runs.len());
                self.run_ids.push(active.run_id().to_string());
                self.txn_names
                    .push(active.txn_branch().expect("started runs own a branch").to_string());
                self.runs.push(Some(active));
            }
            Action::Step { run } => {
                let mut active = self.take_run(step, run, action)?;
                match active.step()? {
                    StepOutcome::Wrote { .. } => self.runs[run as usize] = Some(active),
                    other => return Err(diverged(format!("step ended with {other:?}"))),
                }
            }
            Action::Fail { run } => {
                self.take_run(step, run, action)?.fail()?;
            }
            Action::Finish { run } => {
                let active = self.take_run(step, run, action)?;
                let rec = active.finish()?;
                // a publication conflict aborts the run, as in the model
                if rec.status != RunStatus::Committed && rec.status != RunStatus::Aborted {
                    return Err(diverged(format!("run ended {}", rec.status.as_str())));
                }
            }
            Action::Merge { src, dst } => {
                let into = self.concrete(dst);
                let head = self.repo.branch(&into)?.head;
                match self
                    .repo
                    .merge_with_policy(&Ref::branch(self.concrete(src)), &into, &head, policy)
                {
                    Ok(_) | Err(Error::MergeConflict { .. }) => {}
                    Err(e) => return Err(diverged(e.to_string())),
                }
            }
        }
        Ok(())
    }

    fn snapshot_concrete(&self) -> Result<Concrete> {
        let mut out = BTreeMap::new();
        for b in self.repo.list_branches()? {
            let tables = self.repo.get_commit(&b.head)?.tables;
            out.insert(b.name.clone(), (b.class, tables));
        }
        Ok(out)
    }

    /// Whether the concrete branches realize `s`: same names and classes,
    /// and one consistent bijection between abstract snapshots and
    /// snapshot ids explains every table map.
    fn matches(&self, s: &ModelState, concrete: &Concrete) -> bool {
        if s.branches.len() != concrete.len() {
            return false;
        }
        let mut forward: HashMap<u8, &SnapshotId> = HashMap::new();
        let mut backward: HashMap<&SnapshotId, u8> = HashMap::new();
        for b in &s.branches {
            let Some((class, tables)) = concrete.get(&self.concrete(b.name)) else {
                return false;
            };
            if *class != b.class {
                return false;
            }
            let abstract_tables = &s.commits[b.head as usize].tables;
            let present = abstract_tables.iter().filter(|x| x.is_some()).count();
            if present != tables.len() {
                return false;
            }
            for (t, snap) in abstract_tables.iter().enumerate() {
                let Some(snap) = snap else { continue };
                let Some(id) = tables.get(&table_name(t)) else {
                    return false;
                };
                if *forward.entry(*snap).or_insert(id) != id || *backward.entry(id).or_insert(*snap) != *snap {
                    return false;
                }
            }
        }
        true
    }

    fn describe(&self, s: &ModelState) -> String {
        let parts: Vec<String> = s
            .branches
            .iter()
            .map(|b| {
                let tables: Vec<String> = s.commits[b.head as usize]
                    .tables
                    .iter()
                    .enumerate()
                    .filter_map(|(t, x)| x.map(|x| format!("t{t}=s{x}")))
                    .collect();
                format!("{} {} {{{}}}", self.concrete(b.name), b.class, tables.join(", "))
            })
            .collect();
        parts.join("; ")
    }
}

fn describe_concrete(c: &Concrete) -> String {
    let parts: Vec<String> = c
        .iter()
        .map(|(name, (class, tables))| {
            let cells: Vec<String> = tables
                .iter()
                .map(|(t, s)| format!("{t}={}", &s.as_str()[..8]))
                .collect();
            format!("{name} {class} {{{}}}", cells.join(", "))
        })
        .collect();
    parts.join("; ")
}

/// Replays `trace` on `repo`, which must be freshly initialized. After
/// every action the concrete branches must realize one of the model's
/// possible successor states; the first mismatch is a `Divergence`.
pub fn replay(trace: &Trace, repo: &Repo) -> Result<ReplayReport> {
    let mut r = Replayer {
        repo,
        trace,
        runs: Vec::new(),
        run_ids: Vec::new(),
        txn_names: Vec::new(),
        next_value: 0,
    };
    let bounds = &trace.bounds;
    let mut state = trace.initial_state();
    let concrete = r.snapshot_concrete()?;
    if !r.matches(&state, &concrete) {
        return Err(Error::Divergence {
            step: 0,
            expected: r.describe(&state),
            actual: describe_concrete(&concrete),
        });
    }
    for (i, step) in trace.steps.iter().enumerate() {
        let n = i + 1;
        let options = state.successors(&step.action, bounds, trace.policy);
        if !options.contains(&step.state) {
            return Err(Error::ActionNotEnabled {
                step: n,
                action: step.action.to_string(),
            });
        }
        r.apply(n, &step.action)?;
        let concrete = r.snapshot_concrete()?;
        // prefer the recorded outcome; fall back to any other the model allows
        let matched = std::iter::once(&step.state)
            .chain(options.iter())
            .find(|s| r.matches(s, &concrete))
            .cloned();
        match matched {
            Some(s) => state = s,
            None => {
                return Err(Error::Divergence {
                    step: n,
                    expected: r.describe(&step.state),
                    actual: describe_concrete(&concrete),
                })
            }
        }
    }
    let concrete = r.snapshot_concrete()?;
    Ok(ReplayReport {
        steps: trace.steps.len(),
        run_ids: r.run_ids,
        classes: concrete.iter().map(|(k, (c, _))| (k.clone(), *c)).collect(),
        branches: concrete.into_iter().map(|(k, (_, t))| (k, t)).collect(),
    })
}

/// Replays `trace` on a new repository in a temporary directory.
pub fn replay_fresh(trace: &Trace) -> Result<ReplayReport> {
    let dir = std::env::temp_dir().join(format!(
        "lakekit-replay-{}-{}",
        std::process::id(),
        REPLAY_SEQ.fetch_add(1, std::sync::atomic::Ordering::SeqCst)
    ));
    let _ = std::fs::remove_dir_all(&dir);
    let result = Repo::init(&dir, RepoOptions::deterministic(0, 0)).and_then(|repo| replay(trace, &repo));
    let _ = std::fs::remove_dir_all(&dir);
    result
}

static REPLAY_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
