//! Table-level diff, common-ancestor search and fast-forward / three-way
//! merges over commit table maps.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::catalog::{BranchClass, Commit, CommitId, Policy, Ref, Repo, SnapshotId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TableChange {
    pub table: String,
    pub from: SnapshotId,
    pub to: SnapshotId,
}

/// Difference between two table maps. The three parts are disjoint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TableDiff {
    pub added: BTreeSet<String>,
    pub removed: BTreeSet<String>,
    pub changed: Vec<TableChange>,
}

impl TableDiff {
    pub fn between(from: &BTreeMap<String, SnapshotId>, to: &BTreeMap<String, SnapshotId>) -> TableDiff {
        let mut d = TableDiff::default();
        for (t, old) in from {
            match to.get(t) {
                None => {
                    d.removed.insert(t.clone());
                }
                Some(new) if new != old => d.changed.push(TableChange {
                    table: t.clone(),
                    from: old.clone(),
                    to: new.clone(),
                }),
                Some(_) => {}
            }
        }
        for t in to.keys() {
            if !from.contains_key(t) {
                d.added.insert(t.clone());
            }
        }
        d
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.changed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    NoOp,
    FastForward,
    ThreeWay,
}

impl MergeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MergeKind::NoOp => "no_op",
            MergeKind::FastForward => "fast_forward",
            MergeKind::ThreeWay => "three_way",
        }
    }
}

/// A successful merge. Conflicts are reported as
/// [`Error::MergeConflict`] instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeResult {
    pub kind: MergeKind,
    /// Destination head after the merge.
    pub head: CommitId,
}

/// Three-way merge of table maps. A table takes whichever side changed it
/// relative to `base`; a table changed on both sides to different values
/// (removal counts as a change) is a conflict. Conflicting table names are
/// returned sorted.
pub fn merge_table_maps<V: Clone + Eq>(
    base: &BTreeMap<String, V>,
    ours: &BTreeMap<String, V>,
    theirs: &BTreeMap<String, V>,
) -> std::result::Result<BTreeMap<String, V>, Vec<String>> {
    let names: BTreeSet<&String> = base.keys().chain(ours.keys()).chain(theirs.keys()).collect();
    let mut out = BTreeMap::new();
    let mut conflicts = Vec::new();
    for name in names {
        let (a, d, s) = (base.get(name), ours.get(name), theirs.get(name));
        let pick = if d == s || s == a {
            d
        } else if d == a {
            s
        } else {
            conflicts.push(name.clone());
            continue;
        };
        if let Some(v) = pick {
            out.insert(name.clone(), v.clone());
        }
    }
    if conflicts.is_empty() {
        Ok(out)
    } else {
        Err(conflicts)
    }
}

impl Repo {
    /// Lowest common ancestor of two commits; among several, the one with
    /// the smallest id.
    pub fn common_ancestor(&self, a: &CommitId, b: &CommitId) -> Result<CommitId> {
        let ours = self.ancestors(a)?;
        let theirs = self.ancestors(b)?;
        let common: HashSet<&CommitId> = ours.intersection(&theirs).collect();
        // every proper ancestor of a common commit is common and not lowest
        let mut shadowed: HashSet<CommitId> = HashSet::new();
        let mut stack: Vec<CommitId> = Vec::new();
        for c in &common {
            stack.extend(self.get_commit(c)?.parents);
        }
        while let Some(c) = stack.pop() {
            if shadowed.insert(c.clone()) {
                stack.extend(self.get_commit(&c)?.parents);
            }
        }
        common
            .into_iter()
            .filter(|c| !shadowed.contains(*c))
            .min()
            .cloned()
            .ok_or_else(|| Error::Corrupt(format!("commits {a} and {b} share no ancestor")))
    }

    pub fn diff(&self, from: &Ref, to: &Ref) -> Result<TableDiff> {
        Ok(TableDiff::between(&self.table_map(from)?, &self.table_map(to)?))
    }

    /// Merges `source` into branch `into` under the repository policy.
    pub fn merge(&self, source: &Ref, into: &str, expected_head: &CommitId) -> Result<MergeResult> {
        self.merge_with_policy(source, into, expected_head, self.policy())
    }

    pub fn merge_with_policy(
        &self,
        source: &Ref,
        into: &str,
        expected_head: &CommitId,
        policy: Policy,
    ) -> Result<MergeResult> {
        let src = match source {
            Ref::Branch(name) => {
                let b = self.branch(name)?;
                match b.class {
                    BranchClass::Transactional => return Err(Error::TransactionalBranchPrivate(name.clone())),
                    BranchClass::Aborted if !policy.allow_merge_from_aborted => {
                        return Err(Error::AbortedSourceForbidden(name.clone()))
                    }
                    _ => b.head,
                }
            }
            other => {
                let id = self.resolve_ref(other)?;
                if !policy.allow_merge_from_aborted && self.is_aborted_lineage(&id)? {
                    return Err(Error::AbortedSourceForbidden(other.to_string()));
                }
                id
            }
        };
        self.merge_commit_into(&src, &source.to_string(), into, expected_head)
    }

    /// Merge without source guardrails; used by the run engine to publish
    /// transactional branches.
    pub(crate) fn merge_commit_into(
        &self,
        src: &CommitId,
        label: &str,
        into: &str,
        expected_head: &CommitId,
    ) -> Result<MergeResult> {
        let dest = self.branch(into)?;
        match dest.class {
            BranchClass::Normal => {}
            BranchClass::Aborted => return Err(Error::AbortedBranchImmutable(into.to_string())),
            BranchClass::Transactional => return Err(Error::NotNormalBranch(into.to_string())),
        }
        if &dest.head != expected_head {
            return Err(Error::CasConflict {
                branch: into.to_string(),
                expected: expected_head.to_string(),
                actual: dest.head.to_string(),
            });
        }
        let d = dest.head;
        if *src == d || self.ancestors(&d)?.contains(src) {
            return Ok(MergeResult {
                kind: MergeKind::NoOp,
                head: d,
            });
        }
        if self.ancestors(src)?.contains(&d) {
            self.cas_head(into, &d, src)?;
            return Ok(MergeResult {
                kind: MergeKind::FastForward,
                head: src.clone(),
            });
        }
        let base = self.common_ancestor(&d, src)?;
        let tables = merge_table_maps(
            &self.get_commit(&base)?.tables,
            &self.get_commit(&d)?.tables,
            &self.get_commit(src)?.tables,
        )
        .map_err(|tables| Error::MergeConflict { tables })?;
        let commit = Commit {
            tables,
            parents: vec![d.clone(), src.clone()],
            message: format!("merge {label} into {into}"),
            author: self.author().to_string(),
            timestamp: self.now(),
        };
        let id = self.put_commit(&commit)?;
        self.cas_head(into, &d, &id)?;
        Ok(MergeResult {
            kind: MergeKind::ThreeWay,
            head: id,
        })
    }
}
