//! Abstract lake states and the transition relation.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::catalog::BranchClass;
use crate::model::{Bounds, ModelPolicy};

/// Branch identities. User branches and runs are numbered in creation
/// order, so names never need renaming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum BranchName {
    Main,
    /// `b<n+1>`
    User(u8),
    /// `txn/r<n+1>`, owned by run `n`
    Txn(u8),
}

impl fmt::Display for BranchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchName::Main => f.write_str("main"),
            BranchName::User(n) => write!(f, "b{}", n + 1),
            BranchName::Txn(n) => write!(f, "txn/r{}", n + 1),
        }
    }
}

fn parse_index(s: &str, prefix: &str) -> Option<u8> {
    let n: u8 = s.strip_prefix(prefix)?.parse().ok()?;
    n.checked_sub(1)
}

impl FromStr for BranchName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "main" {
            return Ok(BranchName::Main);
        }
        if let Some(n) = parse_index(s, "txn/r") {
            return Ok(BranchName::Txn(n));
        }
        parse_index(s, "b")
            .map(BranchName::User)
            .ok_or_else(|| format!("bad branch name `{s}`"))
    }
}

pub(crate) fn run_name(r: u8) -> String {
    format!("r{}", r + 1)
}

pub(crate) fn parse_run(s: &str) -> Result<u8, String> {
    parse_index(s, "r").ok_or_else(|| format!("bad run name `{s}`"))
}

pub(crate) fn parse_table(s: &str) -> Result<u8, String> {
    s.strip_prefix('t')
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| format!("bad table name `{s}`"))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelCommit {
    /// Snapshot per table, indexed by table number.
    pub tables: Vec<Option<u8>>,
    /// Ordered: a merge commit lists the destination first.
    pub parents: Vec<u8>,
    /// Branch the commit was created on; `None` for the root.
    pub origin: Option<BranchName>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelBranch {
    pub name: BranchName,
    pub head: u8,
    pub class: BranchClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRunStatus {
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelRun {
    pub target: BranchName,
    /// Head of the target when the run began.
    pub begin: u8,
    /// Next plan position.
    pub idx: u8,
    /// Snapshot written by each completed step.
    pub outputs: Vec<u8>,
    pub last_commit: Option<u8>,
    pub status: ModelRunStatus,
}

/// One system state. Commits and snapshots are anonymous: two states that
/// differ only by a renaming of them are stored identically (see
/// [`ModelState::canonical`]).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelState {
    /// Index 0 is the root commit.
    pub commits: Vec<ModelCommit>,
    /// Sorted by name.
    pub branches: Vec<ModelBranch>,
    pub runs: Vec<ModelRun>,
    pub users: u8,
    pub commits_made: u8,
    pub snapshots_made: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Create-only write of a fresh snapshot on a normal branch.
    CreateTable {
        branch: BranchName,
        table: u8,
    },
    CreateBranch {
        name: BranchName,
        from: BranchName,
    },
    /// Opens the run's transactional branch at the target's head.
    Begin {
        run: u8,
        branch: BranchName,
    },
    /// Creates the next planned table on the run's branch.
    Step {
        run: u8,
    },
    /// Aborts the run; its branch becomes read-only.
    Fail {
        run: u8,
    },
    /// Merges the run's branch into its target and deletes it.
    Finish {
        run: u8,
    },
    Merge {
        src: BranchName,
        dst: BranchName,
    },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::CreateTable { branch, table } => write!(f, "create-table {branch} t{table}"),
            Action::CreateBranch { name, from } => write!(f, "create-branch {name} {from}"),
            Action::Begin { run, branch } => write!(f, "begin {} {branch}", run_name(*run)),
            Action::Step { run } => write!(f, "step {}", run_name(*run)),
            Action::Fail { run } => write!(f, "fail {}", run_name(*run)),
            Action::Finish { run } => write!(f, "finish {}", run_name(*run)),
            Action::Merge { src, dst } => write!(f, "merge {src} {dst}"),
        }
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let words: Vec<&str> = s.split_whitespace().collect();
        let branch = |w: &str| w.parse::<BranchName>();
        Ok(match words.as_slice() {
            ["create-table", b, t] => Action::CreateTable {
                branch: branch(b)?,
                table: parse_table(t)?,
            },
            ["create-branch", n, from] => Action::CreateBranch {
                name: branch(n)?,
                from: branch(from)?,
            },
            ["begin", r, b] => Action::Begin {
                run: parse_run(r)?,
                branch: branch(b)?,
            },
            ["step", r] => Action::Step { run: parse_run(r)? },
            ["fail", r] => Action::Fail { run: parse_run(r)? },
            ["finish", r] => Action::Finish { run: parse_run(r)? },
            ["merge", a, b] => Action::Merge {
                src: branch(a)?,
                dst: branch(b)?,
            },
            _ => return Err(format!("unknown action `{s}`")),
        })
    }
}

/// Outcome of merging one head into another.
#[derive(Debug, Clone, PartialEq, Eq)]
enum MergeOutcome {
    NoOp,
    FastForward,
    ThreeWay(Vec<Option<u8>>),
    Conflict,
}

impl ModelState {
    pub fn initial(bounds: &Bounds) -> ModelState {
        ModelState {
            commits: vec![ModelCommit {
                tables: vec![None; bounds.max_tables],
                parents: Vec::new(),
                origin: None,
            }],
            branches: vec![ModelBranch {
                name: BranchName::Main,
                head: 0,
                class: BranchClass::Normal,
            }],
            runs: Vec::new(),
            users: 0,
            commits_made: 1,
            snapshots_made: 0,
        }
    }

    pub fn branch(&self, name: BranchName) -> Option<&ModelBranch> {
        self.branches.iter().find(|b| b.name == name)
    }

    fn branch_mut(&mut self, name: BranchName) -> &mut ModelBranch {
        self.branches
            .iter_mut()
            .find(|b| b.name == name)
            .expect("branch exists")
    }

    pub fn head_tables(&self, name: BranchName) -> Option<&[Option<u8>]> {
        self.branch(name)
            .map(|b| self.commits[b.head as usize].tables.as_slice())
    }

    /// `c` and all of its ancestors.
    pub fn ancestors(&self, c: u8) -> HashSet<u8> {
        let mut seen = HashSet::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            if seen.insert(x) {
                stack.extend(&self.commits[x as usize].parents);
            }
        }
        seen
    }

    /// Lowest common ancestors of `a` and `b`.
    fn lcas(&self, a: u8, b: u8) -> Vec<u8> {
        let common: HashSet<u8> = self.ancestors(a).intersection(&self.ancestors(b)).copied().collect();
        let mut shadowed = HashSet::new();
        for c in &common {
            for p in &self.commits[*c as usize].parents {
                shadowed.extend(self.ancestors(*p));
            }
        }
        let mut out: Vec<u8> = common.difference(&shadowed).copied().collect();
        out.sort_unstable();
        out
    }

    /// Every outcome the merge of `src` into `dst` can have. There is more
    /// than one only when the heads have several lowest common ancestors:
    /// the implementation picks one of them by commit id, which the model
    /// cannot predict.
    fn merge_outcomes(&self, dst: u8, src: u8) -> Vec<MergeOutcome> {
        if self.ancestors(dst).contains(&src) {
            return vec![MergeOutcome::NoOp];
        }
        if self.ancestors(src).contains(&dst) {
            return vec![MergeOutcome::FastForward];
        }
        let d = &self.commits[dst as usize].tables;
        let s = &self.commits[src as usize].tables;
        let mut out = Vec::new();
        for base in self.lcas(dst, src) {
            let a = &self.commits[base as usize].tables;
            let mut merged = Vec::with_capacity(d.len());
            let mut conflict = false;
            for t in 0..d.len() {
                if d[t] == s[t] || s[t] == a[t] {
                    merged.push(d[t]);
                } else if d[t] == a[t] {
                    merged.push(s[t]);
                } else {
                    conflict = true;
                    break;
                }
            }
            let o = if conflict {
                MergeOutcome::Conflict
            } else {
                MergeOutcome::ThreeWay(merged)
            };
            if !out.contains(&o) {
                out.push(o);
            }
        }
        out
    }

    fn new_commit(&mut self, tables: Vec<Option<u8>>, parents: Vec<u8>, origin: BranchName) -> u8 {
        self.commits.push(ModelCommit {
            tables,
            parents,
            origin: Some(origin),
        });
        self.commits_made += 1;
        (self.commits.len() - 1) as u8
    }

    /// Every action whose preconditions hold, in a fixed order.
    pub fn enabled_actions(&self, bounds: &Bounds, policy: ModelPolicy) -> Vec<Action> {
        self.candidate_actions(bounds)
            .into_iter()
            .filter(|a| !self.raw_successors(a, bounds, policy).is_empty())
            .collect()
    }

    /// Superset of the enabled actions, in the exploration order.
    pub(crate) fn candidate_actions(&self, bounds: &Bounds) -> Vec<Action> {
        let mut candidates = Vec::new();
        for b in &self.branches {
            for t in 0..bounds.max_tables as u8 {
                candidates.push(Action::CreateTable {
                    branch: b.name,
                    table: t,
                });
            }
        }
        let fresh = BranchName::User(self.users);
        for b in &self.branches {
            candidates.push(Action::CreateBranch {
                name: fresh,
                from: b.name,
            });
        }
        let next_run = self.runs.len() as u8;
        for b in &self.branches {
            candidates.push(Action::Begin {
                run: next_run,
                branch: b.name,
            });
        }
        for r in 0..self.runs.len() as u8 {
            candidates.push(Action::Step { run: r });
            candidates.push(Action::Fail { run: r });
            candidates.push(Action::Finish { run: r });
        }
        for s in &self.branches {
            for d in &self.branches {
                candidates.push(Action::Merge {
                    src: s.name,
                    dst: d.name,
                });
            }
        }
        candidates
    }

    /// Canonical successor states of `action`; empty when it is not
    /// enabled.
    pub fn successors(&self, action: &Action, bounds: &Bounds, policy: ModelPolicy) -> Vec<ModelState> {
        self.raw_successors(action, bounds, policy)
            .iter()
            .map(ModelState::canonical)
            .collect()
    }

    /// Successors before relabeling: existing commits keep their ids and
    /// new ones are appended.
    pub(crate) fn raw_successors(&self, action: &Action, bounds: &Bounds, policy: ModelPolicy) -> Vec<ModelState> {
        let commit_budget = (self.commits_made as usize) < bounds.max_commits;
        let snapshot_budget = (self.snapshots_made as usize) < bounds.max_snapshots;
        let plan_len = bounds.max_tables as u8;
        let mut out = Vec::new();
        match *action {
            Action::CreateTable { branch, table } => {
                let Some(b) = self.branch(branch) else { return out };
                let head = &self.commits[b.head as usize];
                if b.class != BranchClass::Normal
                    || table >= plan_len
                    || head.tables[table as usize].is_some()
                    || !commit_budget
                    || !snapshot_budget
                {
                    return out;
                }
                let mut next = self.clone();
                let mut tables = head.tables.clone();
                tables[table as usize] = Some(next.snapshots_made);
                next.snapshots_made += 1;
                let c = next.new_commit(tables, vec![b.head], branch);
                next.branch_mut(branch).head = c;
                out.push(next);
            }
            Action::CreateBranch { name, from } => {
                let Some(src) = self.branch(from) else { return out };
                let allowed = match src.class {
                    BranchClass::Normal => true,
                    BranchClass::Transactional => false,
                    BranchClass::Aborted => policy.branch_from_aborted(),
                };
                if name != BranchName::User(self.users) || !allowed || self.branches.len() >= bounds.max_branches {
                    return out;
                }
                let mut next = self.clone();
                next.branches.push(ModelBranch {
                    name,
                    head: src.head,
                    class: BranchClass::Normal,
                });
                next.branches.sort_by_key(|b| b.name);
                next.users += 1;
                out.push(next);
            }
            Action::Begin { run, branch } => {
                let Some(b) = self.branch(branch) else { return out };
                if run as usize != self.runs.len()
                    || self.runs.len() >= bounds.max_runs
                    || b.class != BranchClass::Normal
                    || self.branches.len() >= bounds.max_branches
                {
                    return out;
                }
                let mut next = self.clone();
                next.branches.push(ModelBranch {
                    name: BranchName::Txn(run),
                    head: b.head,
                    class: BranchClass::Transactional,
                });
                next.branches.sort_by_key(|b| b.name);
                next.runs.push(ModelRun {
                    target: branch,
                    begin: b.head,
                    idx: 0,
                    outputs: Vec::new(),
                    last_commit: None,
                    status: ModelRunStatus::Running,
                });
                out.push(next);
            }
            Action::Step { run } => {
                let Some(r) = self.runs.get(run as usize) else {
                    return out;
                };
                let txn = BranchName::Txn(run);
                if r.status != ModelRunStatus::Running || r.idx >= plan_len || !commit_budget || !snapshot_budget {
                    return out;
                }
                let head = self.branch(txn).expect("running runs own a branch").head;
                let t = r.idx as usize;
                if self.commits[head as usize].tables[t].is_some() {
                    return out;
                }
                let mut next = self.clone();
                let mut tables = next.commits[head as usize].tables.clone();
                let s = next.snapshots_made;
                tables[t] = Some(s);
                next.snapshots_made += 1;
                let c = next.new_commit(tables, vec![head], txn);
                next.branch_mut(txn).head = c;
                let r = &mut next.runs[run as usize];
                r.idx += 1;
                r.outputs.push(s);
                r.last_commit = Some(c);
                out.push(next);
            }
            Action::Fail { run } => {
                let Some(r) = self.runs.get(run as usize) else {
                    return out;
                };
                if r.status != ModelRunStatus::Running {
                    return out;
                }
                let mut next = self.clone();
                next.runs[run as usize].status = ModelRunStatus::Failed;
                next.branch_mut(BranchName::Txn(run)).class = BranchClass::Aborted;
                out.push(next);
            }
            Action::Finish { run } => {
                let Some(r) = self.runs.get(run as usize) else {
                    return out;
                };
                if r.status != ModelRunStatus::Running || r.idx < plan_len {
                    return out;
                }
                let txn = BranchName::Txn(run);
                let src = self.branch(txn).expect("running runs own a branch").head;
                let Some(dst) = self.branch(r.target) else { return out };
                let dst_head = dst.head;
                for o in self.merge_outcomes(dst_head, src) {
                    let mut next = self.clone();
                    match o {
                        MergeOutcome::Conflict => {
                            next.runs[run as usize].status = ModelRunStatus::Failed;
                            next.branch_mut(txn).class = BranchClass::Aborted;
                        }
                        other => {
                            let head = match other {
                                MergeOutcome::NoOp => dst_head,
                                MergeOutcome::FastForward => src,
                                MergeOutcome::ThreeWay(tables) => {
                                    if !commit_budget {
                                        continue;
                                    }
                                    next.new_commit(tables, vec![dst_head, src], r.target)
                                }
                                MergeOutcome::Conflict => unreachable!(),
                            };
                            next.branch_mut(r.target).head = head;
                            next.branches.retain(|b| b.name != txn);
                            next.runs[run as usize].status = ModelRunStatus::Finished;
                        }
                    }
                    out.push(next);
                }
            }
            Action::Merge { src, dst } => {
                let (Some(s), Some(d)) = (self.branch(src), self.branch(dst)) else {
                    return out;
                };
                let allowed = match s.class {
                    BranchClass::Normal => true,
                    BranchClass::Transactional => false,
                    BranchClass::Aborted => policy.merge_from_aborted(),
                };
                if src == dst || !allowed || d.class != BranchClass::Normal {
                    return out;
                }
                let (s_head, d_head) = (s.head, d.head);
                let mut changed = false;
                let mut unchanged = false;
                for o in self.merge_outcomes(d_head, s_head) {
                    let mut next = self.clone();
                    let head = match o {
                        MergeOutcome::NoOp | MergeOutcome::Conflict => {
                            unchanged = true;
                            continue;
                        }
                        MergeOutcome::FastForward => s_head,
                        MergeOutcome::ThreeWay(tables) => {
                            if !commit_budget {
                                unchanged = true;
                                continue;
                            }
                            next.new_commit(tables, vec![d_head, s_head], dst)
                        }
                    };
                    next.branch_mut(dst).head = head;
                    changed = true;
                    out.push(next);
                }
                // a merge that may or may not go through keeps both futures
                if changed && unchanged {
                    out.push(self.clone());
                }
            }
        }
        out
    }

    /// Relabels commits and snapshots by a traversal from the named roots
    /// (root commit, branch heads in name order, then run commits in run
    /// order), following parents in order. States related by a renaming of
    /// commits and snapshots get identical labels. Unreachable commits are
    /// dropped; they cannot influence any future transition.
    pub fn canonical(&self) -> ModelState {
        let n = self.commits.len();
        let mut new_id: Vec<Option<u8>> = vec![None; n];
        let mut order: Vec<u8> = Vec::with_capacity(n);
        let mut roots = vec![0u8];
        roots.extend(self.branches.iter().map(|b| b.head));
        for r in &self.runs {
            roots.push(r.begin);
            roots.extend(r.last_commit);
        }
        for root in roots {
            let mut stack = vec![root];
            while let Some(c) = stack.pop() {
                if new_id[c as usize].is_some() {
                    continue;
                }
                new_id[c as usize] = Some(order.len() as u8);
                order.push(c);
                for p in self.commits[c as usize].parents.iter().rev() {
                    stack.push(*p);
                }
            }
        }
        let mut snap_id: Vec<Option<u8>> = vec![None; self.snapshots_made as usize];
        let mut next_snap = 0u8;
        for &c in &order {
            for s in self.commits[c as usize].tables.iter().flatten() {
                if snap_id[*s as usize].is_none() {
                    snap_id[*s as usize] = Some(next_snap);
                    next_snap += 1;
                }
            }
        }
        let cid = |c: u8| new_id[c as usize].expect("root-reachable commit");
        let sid = |s: u8| snap_id[s as usize].expect("snapshot of a reachable commit");
        ModelState {
            commits: order
                .iter()
                .map(|&c| {
                    let old = &self.commits[c as usize];
                    ModelCommit {
                        tables: old.tables.iter().map(|s| s.map(sid)).collect(),
                        parents: old.parents.iter().map(|&p| cid(p)).collect(),
                        origin: old.origin,
                    }
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| ModelBranch {
                    head: cid(b.head),
                    ..b.clone()
                })
                .collect(),
            runs: self
                .runs
                .iter()
                .map(|r| ModelRun {
                    begin: cid(r.begin),
                    outputs: r.outputs.iter().map(|&s| sid(s)).collect(),
                    last_commit: r.last_commit.map(cid),
                    ..r.clone()
                })
                .collect(),
            users: self.users,
            commits_made: self.commits_made,
            snapshots_made: self.snapshots_made,
        }
    }

    /// Commits first created on a branch that is now aborted and that are
    /// reachable from the head of the target of the run owning that branch.
    pub fn aborted_leaks(&self) -> Vec<(u8, BranchName)> {
        let mut out = Vec::new();
        for (r, run) in self.runs.iter().enumerate() {
            let txn = BranchName::Txn(r as u8);
            let aborted = self.branch(txn).is_some_and(|b| b.class == BranchClass::Aborted);
            let Some(target) = self.branch(run.target) else {
                continue;
            };
            if !aborted {
                continue;
            }
            let mut leaked: Vec<u8> = self
                .ancestors(target.head)
                .into_iter()
                .filter(|c| self.commits[*c as usize].origin == Some(txn))
                .collect();
            leaked.sort_unstable();
            out.extend(leaked.into_iter().map(|c| (c, run.target)));
        }
        out
    }

    /// Normal branches whose table map is the begin state of a finished or
    /// failed run plus a proper, nonempty prefix of its planned outputs.
    pub fn partial_publications(&self, bounds: &Bounds) -> Vec<(BranchName, u8, usize)> {
        let mut out = Vec::new();
        for (r, run) in self.runs.iter().enumerate() {
            if run.status == ModelRunStatus::Running {
                continue;
            }
            let mut expected = self.commits[run.begin as usize].tables.clone();
            for (k, s) in run.outputs.iter().enumerate() {
                if k + 1 >= bounds.max_tables {
                    break;
                }
                expected[k] = Some(*s);
                for b in &self.branches {
                    if b.class == BranchClass::Normal && self.commits[b.head as usize].tables == expected {
                        out.push((b.name, r as u8, k + 1));
                    }
                }
            }
        }
        out
    }

    /// Existing branches whose head differs in `next`, a raw successor of
    /// `self`.
    pub(crate) fn moved_heads(&self, next: &ModelState) -> BTreeSet<BranchName> {
        self.branches
            .iter()
            .filter(|b| next.branch(b.name).is_some_and(|nb| nb.head != b.head))
            .map(|b| b.name)
            .collect()
    }
}
