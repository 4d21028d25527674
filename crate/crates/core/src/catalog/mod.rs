//! File-backed versioned table catalog.
//!
//! Layout under the repository root:
//!
//! ```text
//! FORMAT                  format version and hash algorithm
//! LOCK                    pid of the process holding the repository
//! objects/<xx>/<digest>   commits, snapshot records, row payloads, manifests
//! refs/branches/<name>    "<class> <head> <created_from>\n"
//! refs/tags/<name>        "<commit>\n"
//! runs/registry.jsonl     append-only run records
//! ```

mod clock;
mod objects;
mod refs;
pub(crate) mod store;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;

pub use clock::{Clock, FixedClock, SystemClock};
pub use objects::{Commit, CommitId, SnapshotId};
pub use refs::{validate_name, Branch, BranchClass, Ref, Tag, MAIN};
pub use store::StoreStats;

use crate::contracts::{validate_data, SchemaContract};
use crate::error::{Error, Result};
use crate::run::registry::RunRegistry;
use crate::table::TableSnapshot;
use objects::SnapshotRecord;
use refs::RefFiles;
use store::{ObjectStore, HASH_ALGORITHM};

const FORMAT_VERSION: u32 = 1;

/// Guardrails around aborted branches. Both default to off, i.e. aborted
/// branches can neither be branched from nor merged out of.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Policy {
    pub allow_branch_from_aborted: bool,
    pub allow_merge_from_aborted: bool,
}

#[derive(Clone)]
pub struct RepoOptions {
    pub clock: Arc<dyn Clock>,
    pub policy: Policy,
    /// Seed for run-id suffixes; `None` draws from the OS.
    pub seed: Option<u64>,
    pub author: String,
}

impl Default for RepoOptions {
    fn default() -> Self {
        RepoOptions {
            clock: Arc::new(SystemClock),
            policy: Policy::default(),
            seed: None,
            author: "lakekit".to_string(),
        }
    }
}

impl RepoOptions {
    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Fixed clock and seed, for reproducible ids in tests.
    pub fn deterministic(t: i64, seed: u64) -> Self {
        RepoOptions::default()
            .with_clock(Arc::new(FixedClock::new(t)))
            .with_seed(seed)
    }
}

/// A commit together with its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommitEntry {
    pub id: CommitId,
    #[serde(flatten)]
    pub commit: Commit,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FsckReport {
    pub commits_checked: usize,
    pub snapshots_checked: usize,
    pub problems: Vec<String>,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

struct LockFile(PathBuf);

impl LockFile {
    fn acquire(root: &Path) -> Result<LockFile> {
        let path = root.join("LOCK");
        for _ in 0..2 {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    use std::io::Write;
                    f.write_all(format!("{}\n", std::process::id()).as_bytes())
                        .map_err(|e| Error::io("writing lock file", e))?;
                    return Ok(LockFile(path));
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid: Option<u32> = holder.trim().parse().ok();
                    let alive = match pid {
                        Some(p) if p == std::process::id() => true,
                        Some(p) => Path::new(&format!("/proc/{p}")).exists(),
                        // being written right now
                        None => true,
                    };
                    if alive {
                        return Err(Error::RepoLocked(root.to_path_buf()));
                    }
                    // stale lock left by a dead process
                    let _ = fs::remove_file(&path);
                }
                Err(e) => return Err(Error::io("creating lock file", e)),
            }
        }
        Err(Error::RepoLocked(root.to_path_buf()))
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Handle on an open repository. Safe to share between threads; branch
/// head updates are serialised internally and only happen by
/// compare-and-set.
pub struct Repo {
    root: PathBuf,
    store: ObjectStore,
    refs: RefFiles,
    ref_lock: Mutex<()>,
    commit_cache: RwLock<HashMap<CommitId, Commit>>,
    options: RepoOptions,
    pub(crate) runs: RunRegistry,
    pub(crate) rng: Mutex<StdRng>,
    _lock: LockFile,
}

impl std::fmt::Debug for Repo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Repo").field("root", &self.root).finish()
    }
}

impl Repo {
    /// Creates a repository in an empty or missing directory, with `main`
    /// pointing at an empty root commit.
    pub fn init(root: impl AsRef<Path>, options: RepoOptions) -> Result<Repo> {
        let root = root.as_ref();
        if root.join("FORMAT").exists() {
            return Err(Error::AlreadyInitialized(root.to_path_buf()));
        }
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
            if entries.next().is_some() {
                return Err(Error::io(
                    format!("initializing {}", root.display()),
                    io::Error::new(io::ErrorKind::AlreadyExists, "directory is not empty"),
                ));
            }
        }
        for d in ["objects", "tmp", "runs"] {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?;
        }
        RefFiles::new(root).create_dirs()?;
        let repo = Repo::open_unchecked(root, options)?;
        let init = Commit {
            tables: BTreeMap::new(),
            parents: Vec::new(),
            message: "init".to_string(),
            author: repo.options.author.clone(),
            timestamp: repo.options.clock.now(),
        };
        let id = repo.put_commit(&init)?;
        repo.refs.write_branch(&Branch {
            name: MAIN.to_string(),
            head: id.clone(),
            class: BranchClass::Normal,
            created_from: id,
        })?;
        // FORMAT goes last: its presence marks a complete repository.
        fs::write(
            root.join("FORMAT"),
            format!("lakekit-repo-format {FORMAT_VERSION}\nhash {HASH_ALGORITHM}\n"),
        )
        .map_err(|e| Error::io("writing FORMAT", e))?;
        Ok(repo)
    }

    /// Opens an existing repository, taking its lock and settling runs left
    /// behind by a crashed process.
    pub fn open(root: impl AsRef<Path>, options: RepoOptions) -> Result<Repo> {
        let root = root.as_ref();
        let format = match fs::read_to_string(root.join("FORMAT")) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(Error::NotARepository(root.to_path_buf())),
            Err(e) => return Err(Error::io("reading FORMAT", e)),
        };
        let expected = format!("lakekit-repo-format {FORMAT_VERSION}\nhash {HASH_ALGORITHM}\n");
        if format != expected {
            return Err(Error::UnsupportedFormat(format.trim().replace('\n', "; ")));
        }
        let repo = Repo::open_unchecked(root, options)?;
        repo.recover_orphaned_runs()?;
        Ok(repo)
    }

    fn open_unchecked(root: &Path, options: RepoOptions) -> Result<Repo> {
        let lock = LockFile::acquire(root)?;
        let runs = RunRegistry::open(root.join("runs").join("registry.jsonl"))?;
        let rng = match options.seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_entropy(),
        };
        Ok(Repo {
            root: root.to_path_buf(),
            store: ObjectStore::new(root.join("objects"), root.join("tmp")),
            refs: RefFiles::new(root),
            ref_lock: Mutex::new(()),
            commit_cache: RwLock::new(HashMap::new()),
            options,
            runs,
            rng: Mutex::new(rng),
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn policy(&self) -> Policy {
        self.options.policy
    }

    pub fn stats(&self) -> StoreStats {
        self.store.stats()
    }

    pub(crate) fn author(&self) -> &str {
        &self.options.author
    }

    pub(crate) fn now(&self) -> i64 {
        self.options.clock.now()
    }

    pub(crate) fn store(&self) -> &ObjectStore {
        &self.store
    }

    // ---------------------------------------------------------------- objects

    pub(crate) fn put_commit(&self, commit: &Commit) -> Result<CommitId> {
        let id = CommitId(self.store.put(&commit.encode())?);
        self.commit_cache.write().unwrap().insert(id.clone(), commit.clone());
        Ok(id)
    }

    pub fn get_commit(&self, id: &CommitId) -> Result<Commit> {
        if let Some(c) = self.commit_cache.read().unwrap().get(id) {
            return Ok(c.clone());
        }
        let bytes = self
            .store
            .get(&id.0)?
            .ok_or_else(|| Error::UnknownRef(format!("commit:{id}")))?;
        let commit = Commit::decode(&bytes).map_err(|e| Error::Corrupt(format!("commit {id}: {e}")))?;
        self.commit_cache.write().unwrap().insert(id.clone(), commit.clone());
        Ok(commit)
    }

    fn has_commit(&self, id: &str) -> Result<bool> {
        match self.store.get(id)? {
            Some(bytes) => Ok(Commit::decode(&bytes).is_ok()),
            None => Ok(false),
        }
    }

    fn snapshot_record(&self, id: &SnapshotId) -> Result<SnapshotRecord> {
        let bytes = self
            .store
            .get(&id.0)?
            .ok_or_else(|| Error::Corrupt(format!("missing snapshot {id}")))?;
        SnapshotRecord::decode(&bytes).map_err(|e| Error::Corrupt(format!("snapshot {id}: {e}")))
    }

    /// Stores a snapshot (payload plus record) and returns its id.
    pub(crate) fn put_snapshot(&self, snapshot: &TableSnapshot) -> Result<SnapshotId> {
        let data = self.store.put(&snapshot.encode_payload())?;
        let record = SnapshotRecord {
            schema: snapshot.schema().clone(),
            data,
            row_count: snapshot.row_count() as u64,
        };
        Ok(SnapshotId(self.store.put(&record.encode())?))
    }

    pub fn read_snapshot(&self, id: &SnapshotId) -> Result<TableSnapshot> {
        let record = self.snapshot_record(id)?;
        self.store.note_payload_read();
        let bytes = self
            .store
            .get(&record.data)?
            .ok_or_else(|| Error::Corrupt(format!("missing payload {} of snapshot {id}", record.data)))?;
        TableSnapshot::decode_payload(&bytes, record.schema, record.row_count as usize)
            .map_err(|e| Error::Corrupt(format!("payload of snapshot {id}: {e}")))
    }

    /// Schema of a stored snapshot, without touching its rows.
    pub fn snapshot_schema(&self, id: &SnapshotId) -> Result<SchemaContract> {
        Ok(self.snapshot_record(id)?.schema)
    }

    // ------------------------------------------------------------------- refs

    pub fn resolve_ref(&self, r: &Ref) -> Result<CommitId> {
        match r {
            Ref::Branch(name) => Ok(self.branch(name)?.head),
            Ref::Tag(name) => self
                .refs
                .read_tag(name)?
                .map(|t| t.target)
                .ok_or_else(|| Error::UnknownRef(r.to_string())),
            Ref::Commit(hex) => {
                if hex.len() == 64 {
                    if self.has_commit(hex)? {
                        return Ok(CommitId(hex.clone()));
                    }
                    return Err(Error::UnknownRef(r.to_string()));
                }
                if hex.len() < 4 {
                    return Err(Error::UnknownRef(r.to_string()));
                }
                let mut found = Vec::new();
                for id in self.store.ids_with_prefix(hex)? {
                    if self.has_commit(&id)? {
                        found.push(id);
                    }
                }
                match found.len() {
                    1 => Ok(CommitId(found.pop().unwrap())),
                    _ => Err(Error::UnknownRef(r.to_string())),
                }
            }
        }
    }

    /// Parses and resolves a ref spec in one go.
    pub fn resolve(&self, spec: &str) -> Result<CommitId> {
        self.resolve_ref(&spec.parse()?)
    }

    pub fn branch(&self, name: &str) -> Result<Branch> {
        self.refs
            .read_branch(name)?
            .ok_or_else(|| Error::UnknownRef(name.to_string()))
    }

    pub fn try_branch(&self, name: &str) -> Result<Option<Branch>> {
        self.refs.read_branch(name)
    }

    pub fn list_branches(&self) -> Result<Vec<Branch>> {
        self.refs.list_branches()
    }

    pub fn list_tags(&self) -> Result<Vec<Tag>> {
        self.refs.list_tags()
    }

    /// Creates a branch under the repository's default policy.
    pub fn create_branch(&self, name: &str, from: &Ref, class: BranchClass) -> Result<Branch> {
        self.create_branch_with_policy(name, from, class, self.policy())
    }

    /// Creates a branch pointing at `from`. No data is copied.
    pub fn create_branch_with_policy(
        &self,
        name: &str,
        from: &Ref,
        class: BranchClass,
        policy: Policy,
    ) -> Result<Branch> {
        validate_name(name)?;
        if name.starts_with("txn/") {
            return Err(Error::InvalidName {
                name: name.to_string(),
                reason: "the `txn/` namespace is reserved for pipeline runs".into(),
            });
        }
        if class == BranchClass::Aborted {
            return Err(Error::InvalidName {
                name: name.to_string(),
                reason: "branches only become aborted when their run fails".into(),
            });
        }
        let head = match from {
            Ref::Branch(src) => {
                let b = self.branch(src)?;
                match b.class {
                    BranchClass::Aborted if !policy.allow_branch_from_aborted => {
                        return Err(Error::AbortedSourceForbidden(src.clone()))
                    }
                    BranchClass::Transactional => return Err(Error::TransactionalBranchPrivate(src.clone())),
                    _ => b.head,
                }
            }
            other => {
                let id = self.resolve_ref(other)?;
                if !policy.allow_branch_from_aborted && self.is_aborted_lineage(&id)? {
                    return Err(Error::AbortedSourceForbidden(other.to_string()));
                }
                id
            }
        };
        self.create_branch_at(name, &head, class)
    }

    /// Unchecked creation used by the run engine.
    pub(crate) fn create_branch_at(&self, name: &str, head: &CommitId, class: BranchClass) -> Result<Branch> {
        validate_name(name)?;
        let _guard = self.ref_lock.lock().unwrap();
        if self.refs.read_branch(name)?.is_some() {
            return Err(Error::BranchExists(name.to_string()));
        }
        let b = Branch {
            name: name.to_string(),
            head: head.clone(),
            class,
            created_from: head.clone(),
        };
        self.refs.write_branch(&b)?;
        Ok(b)
    }

    /// Moves `branch` from `expected` to `new`, failing if the head moved.
    pub(crate) fn cas_head(&self, branch: &str, expected: &CommitId, new: &CommitId) -> Result<()> {
        let _guard = self.ref_lock.lock().unwrap();
        let mut b = self.branch(branch)?;
        if b.class == BranchClass::Aborted {
            return Err(Error::AbortedBranchImmutable(branch.to_string()));
        }
        if &b.head != expected {
            return Err(Error::CasConflict {
                branch: branch.to_string(),
                expected: expected.to_string(),
                actual: b.head.to_string(),
            });
        }
        b.head = new.clone();
        self.refs.write_branch(&b)
    }

    /// Marks a transactional branch as aborted. Its head is frozen from here on.
    pub(crate) fn mark_aborted(&self, branch: &str) -> Result<()> {
        if branch == MAIN {
            return Err(Error::NotNormalBranch(branch.to_string()));
        }
        let _guard = self.ref_lock.lock().unwrap();
        let mut b = self.branch(branch)?;
        b.class = BranchClass::Aborted;
        self.refs.write_branch(&b)
    }

    pub fn delete_branch(&self, name: &str) -> Result<()> {
        if name == MAIN {
            return Err(Error::CannotDeleteMain);
        }
        let _guard = self.ref_lock.lock().unwrap();
        if self.refs.read_branch(name)?.is_none() {
            return Err(Error::UnknownRef(name.to_string()));
        }
        self.refs.remove_branch(name)
    }

    pub fn tag_commit(&self, name: &str, target: &Ref) -> Result<Tag> {
        validate_name(name)?;
        let target = self.resolve_ref(target)?;
        let tag = Tag {
            name: name.to_string(),
            target,
        };
        self.refs.create_tag(&tag)?;
        Ok(tag)
    }

    // ----------------------------------------------------------------- tables

    /// Upserts `table` on `branch`, provided the branch head is still
    /// `expected_head`.
    pub fn write_table(
        &self,
        branch: &str,
        table: &str,
        snapshot: &TableSnapshot,
        expected_head: &CommitId,
    ) -> Result<CommitEntry> {
        self.commit_table(TableWrite {
            branch,
            table,
            snapshot,
            expected_head,
            message: format!("write {table}"),
            create_only: false,
            validate: true,
        })
    }

    /// Like [`Repo::write_table`] but fails with `TableExists` if the table
    /// is already present on the branch.
    pub fn create_table(
        &self,
        branch: &str,
        table: &str,
        snapshot: &TableSnapshot,
        expected_head: &CommitId,
    ) -> Result<CommitEntry> {
        self.commit_table(TableWrite {
            branch,
            table,
            snapshot,
            expected_head,
            message: format!("create {table}"),
            create_only: true,
            validate: true,
        })
    }

    pub(crate) fn commit_table(&self, w: TableWrite<'_>) -> Result<CommitEntry> {
        validate_name(w.table)?;
        if w.validate {
            let report = validate_data(w.snapshot, w.snapshot.schema());
            if !report.is_conformant() {
                return Err(Error::SchemaViolation {
                    table: w.table.to_string(),
                    details: report.summary(),
                });
            }
        }
        let b = self.branch(w.branch)?;
        if b.class == BranchClass::Aborted {
            return Err(Error::AbortedBranchImmutable(w.branch.to_string()));
        }
        if &b.head != w.expected_head {
            return Err(Error::CasConflict {
                branch: w.branch.to_string(),
                expected: w.expected_head.to_string(),
                actual: b.head.to_string(),
            });
        }
        let head = self.get_commit(w.expected_head)?;
        if w.create_only && head.tables.contains_key(w.table) {
            return Err(Error::TableExists(w.table.to_string()));
        }
        let sid = self.put_snapshot(w.snapshot)?;
        let mut tables = head.tables;
        tables.insert(w.table.to_string(), sid);
        let commit = Commit {
            tables,
            parents: vec![w.expected_head.clone()],
            message: w.message,
            author: self.options.author.clone(),
            timestamp: self.now(),
        };
        let id = self.put_commit(&commit)?;
        self.cas_head(w.branch, w.expected_head, &id)?;
        Ok(CommitEntry { id, commit })
    }

    pub fn table_map(&self, r: &Ref) -> Result<BTreeMap<String, SnapshotId>> {
        Ok(self.get_commit(&self.resolve_ref(r)?)?.tables)
    }

    pub fn snapshot_id(&self, r: &Ref, table: &str) -> Result<SnapshotId> {
        let id = self.resolve_ref(r)?;
        self.get_commit(&id)?
            .tables
            .remove(table)
            .ok_or_else(|| Error::NoSuchTable {
                table: table.to_string(),
                commit: id.to_string(),
            })
    }

    pub fn read_table(&self, r: &Ref, table: &str) -> Result<TableSnapshot> {
        self.read_snapshot(&self.snapshot_id(r, table)?)
    }

    /// Schema of a table at a ref, reading only metadata.
    pub fn read_schema(&self, r: &Ref, table: &str) -> Result<SchemaContract> {
        self.snapshot_schema(&self.snapshot_id(r, table)?)
    }

    /// First-parent history from the ref's head, newest first.
    pub fn log(&self, r: &Ref, limit: usize) -> Result<Vec<CommitEntry>> {
        let mut out = Vec::new();
        let mut next = Some(self.resolve_ref(r)?);
        while let Some(id) = next {
            if out.len() >= limit {
                break;
            }
            let commit = self.get_commit(&id)?;
            next = commit.parents.first().cloned();
            out.push(CommitEntry { id, commit });
        }
        Ok(out)
    }

    // ---------------------------------------------------------------- history

    /// All ancestors of `id`, including itself.
    pub fn ancestors(&self, id: &CommitId) -> Result<HashSet<CommitId>> {
        let mut seen = HashSet::new();
        let mut stack = vec![id.clone()];
        while let Some(c) = stack.pop() {
            if seen.insert(c.clone()) {
                stack.extend(self.get_commit(&c)?.parents);
            }
        }
        Ok(seen)
    }

    /// True when `id` can only be reached through aborted branches: it is
    /// an ancestor of some aborted head and of no other branch head.
    pub fn is_aborted_lineage(&self, id: &CommitId) -> Result<bool> {
        let branches = self.list_branches()?;
        let mut in_aborted = false;
        for b in &branches {
            if self.ancestors(&b.head)?.contains(id) {
                if b.class != BranchClass::Aborted {
                    return Ok(false);
                }
                in_aborted = true;
            }
        }
        Ok(in_aborted)
    }

    /// Checks that every commit reachable from a ref has its parents and
    /// snapshots, that history is acyclic and that it bottoms out at a
    /// single root commit.
    pub fn fsck(&self) -> Result<FsckReport> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        let mut report = FsckReport::default();
        let mut marks: HashMap<CommitId, Mark> = HashMap::new();
        let mut roots = HashSet::new();
        let mut snapshots = HashSet::new();
        let mut starts: Vec<(String, CommitId)> = self
            .list_branches()?
            .into_iter()
            .map(|b| (format!("branch {}", b.name), b.head))
            .collect();
        starts.extend(
            self.list_tags()?
                .into_iter()
                .map(|t| (format!("tag {}", t.name), t.target)),
        );
        for (origin, start) in starts {
            // iterative DFS with explicit exit events for cycle detection
            let mut stack = vec![(start, false)];
            while let Some((id, exiting)) = stack.pop() {
                if exiting {
                    marks.insert(id, Mark::Done);
                    continue;
                }
                match marks.get(&id) {
                    Some(Mark::Done) => continue,
                    Some(Mark::Active) => {
                        report.problems.push(format!("cycle through commit {id}"));
                        continue;
                    }
                    None => {}
                }
                let commit = match self.get_commit(&id) {
                    Ok(c) => c,
                    Err(_) => {
                        report
                            .problems
                            .push(format!("missing commit {id} (reached from {origin})"));
                        marks.insert(id, Mark::Done);
                        continue;
                    }
                };
                report.commits_checked += 1;
                marks.insert(id.clone(), Mark::Active);
                if commit.parents.is_empty() {
                    roots.insert(id.clone());
                }
                for sid in commit.tables.values() {
                    if snapshots.insert(sid.clone()) {
                        report.snapshots_checked += 1;
                        match self.snapshot_record(sid) {
                            Ok(rec) => {
                                if self.store.get(&rec.data)?.is_none() {
                                    report.problems.push(format!("snapshot {sid} lost its payload"));
                                }
                            }
                            Err(_) => report.problems.push(format!("missing snapshot {sid}")),
                        }
                    }
                }
                stack.push((id, true));
                for p in commit.parents {
                    stack.push((p, false));
                }
            }
        }
        if roots.len() > 1 {
            report.problems.push(format!("{} distinct root commits", roots.len()));
        }
        Ok(report)
    }
}

pub(crate) struct TableWrite<'a> {
    pub branch: &'a str,
    pub table: &'a str,
    pub snapshot: &'a TableSnapshot,
    pub expected_head: &'a CommitId,
    pub message: String,
    pub create_only: bool,
    /// Skip the full data scan when the caller has already validated.
    pub validate: bool,
}
