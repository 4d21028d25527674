use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::Rng;

use crate::catalog::{Branch, BranchClass, CommitId, Ref, Repo, TableWrite};
use crate::contracts::{
    check_plan, has_errors, parse_manifest, plan_validation_skips, validate_data_skipping, Diagnostic, PipelinePlan,
    SchemaContract,
};
use crate::error::{Error, Result};
use crate::lang::evaluate;
use crate::run::{NodeOutcome, NodeResult, RunKind, RunOptions, RunRecord, RunStatus, TXN_PREFIX};
use crate::table::TableSnapshot;
use crate::types::{BaseType, Value};

/// Attempts at publishing before a run gives up on a target that keeps
/// moving.
const PUBLISH_ATTEMPTS: usize = 64;

enum Program {
    Manifest {
        plan: PipelinePlan,
        /// node -> columns whose null scan is provably redundant
        skips: HashMap<String, HashSet<String>>,
        /// nodes already materialized on the starting commit
        done: HashSet<String>,
    },
    Fixed(Vec<(String, TableSnapshot)>),
}

impl Program {
    fn node_names(&self) -> Vec<String> {
        match self {
            Program::Manifest { plan, .. } => plan.node_names(),
            Program::Fixed(outputs) => outputs.iter().map(|(t, _)| t.clone()).collect(),
        }
    }
}

/// Result of advancing a run by one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Wrote {
        node: String,
        commit: CommitId,
    },
    Skipped {
        node: String,
    },
    Aborted {
        diagnostic: Diagnostic,
    },
    /// Every node has run; the next call should be [`ActiveRun::finish`].
    Complete,
}

/// A run in progress. Nodes execute one at a time through [`ActiveRun::step`];
/// [`ActiveRun::finish`] executes whatever is left and publishes.
///
/// Dropping an unfinished run leaves its record `running`; the next
/// [`Repo::open`] classifies it as aborted.
pub struct ActiveRun<'r> {
    repo: &'r Repo,
    program: Program,
    nodes: Vec<String>,
    record: RunRecord,
    txn_head: CommitId,
    next: usize,
}

impl std::fmt::Debug for ActiveRun<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActiveRun")
            .field("record", &self.record)
            .field("next", &self.next)
            .finish()
    }
}

struct Begin<'a> {
    kind: RunKind,
    target: &'a str,
    start: CommitId,
    code_hash: String,
    opts: RunOptions,
    resumed_from: Option<String>,
    reproduces: Option<String>,
    manifest_file: Option<String>,
}

impl<'r> ActiveRun<'r> {
    pub fn run_id(&self) -> &str {
        &self.record.run_id
    }

    pub fn txn_branch(&self) -> Option<&str> {
        self.record.txn_branch.as_deref()
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    /// Head of the transactional branch.
    pub fn txn_head(&self) -> &CommitId {
        &self.txn_head
    }

    pub fn is_finished(&self) -> bool {
        self.record.status.is_final()
    }

    pub fn next_node(&self) -> Option<&str> {
        if self.is_finished() {
            return None;
        }
        self.nodes.get(self.next).map(String::as_str)
    }

    /// Executes the next node.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::RunFinished(self.record.run_id.clone()));
        }
        let Some(node) = self.nodes.get(self.next).cloned() else {
            return Ok(StepOutcome::Complete);
        };
        self.next += 1;
        if let Program::Manifest { done, .. } = &self.program {
            if done.contains(&node) {
                self.record.node_results.push(NodeResult {
                    node: node.clone(),
                    outcome: NodeOutcome::Skipped,
                });
                return Ok(StepOutcome::Skipped { node });
            }
        }
        if self.record.options.fail_at_node.as_deref() == Some(node.as_str()) {
            let d = Diagnostic::error("InjectedFault", &node, format!("injected fault at node `{node}`"));
            return self.abort_at(&node, d);
        }
        let produced = match self.produce(&node) {
            Ok(s) => s,
            Err(d) => return self.abort_at(&node, d),
        };
        let txn = self.record.txn_branch.clone().expect("active runs own a branch");
        let write = self.repo.commit_table(TableWrite {
            branch: &txn,
            table: &node,
            snapshot: &produced,
            expected_head: &self.txn_head,
            message: format!("run {}: write {node}", self.record.run_id),
            create_only: self.record.kind == RunKind::Fixed,
            validate: false,
        });
        match write {
            Ok(entry) => {
                let snapshot = entry.commit.tables[&node].clone();
                self.txn_head = entry.id.clone();
                self.record.node_results.push(NodeResult {
                    node: node.clone(),
                    outcome: NodeOutcome::Ok {
                        commit: entry.id.clone(),
                        snapshot,
                    },
                });
                Ok(StepOutcome::Wrote { node, commit: entry.id })
            }
            Err(e) => {
                let d = Diagnostic::from_error(&node, &e);
                self.abort_at(&node, d)
            }
        }
    }

    /// Computes and checks the output of `node` without writing it.
    #[allow(clippy::result_large_err)]
    fn produce(&self, node: &str) -> std::result::Result<TableSnapshot, Diagnostic> {
        match &self.program {
            Program::Fixed(outputs) => Ok(outputs
                .iter()
                .find(|(t, _)| t == node)
                .expect("node names come from the program")
                .1
                .clone()),
            Program::Manifest { plan, skips, .. } => {
                let contract = plan.node(node).expect("node names come from the plan");
                let at = Ref::commit(&self.txn_head);
                let mut inputs = BTreeMap::new();
                for input in &contract.inputs {
                    let snap = self
                        .repo
                        .read_table(&at, input)
                        .map_err(|e| Diagnostic::from_error(node, &e))?;
                    inputs.insert(input.clone(), snap);
                }
                let out = evaluate(&contract.transform, &inputs)
                    .map_err(|e| Diagnostic::from_error(node, &e).with_span(Some(contract.span.clone())))?;
                let out = conform(out, &contract.declared_output, node)?;
                let empty = HashSet::new();
                let skip = skips.get(node).unwrap_or(&empty);
                let report = validate_data_skipping(&out, &contract.declared_output, skip);
                if let Some(v) = report.violations.first() {
                    return Err(Diagnostic::error(v.code(), node, report.summary()).with_column(v.column()));
                }
                Ok(out)
            }
        }
    }

    fn abort_at(&mut self, node: &str, diagnostic: Diagnostic) -> Result<StepOutcome> {
        self.record.node_results.push(NodeResult {
            node: node.to_string(),
            outcome: NodeOutcome::Failed {
                diagnostic: diagnostic.clone(),
            },
        });
        self.abort(diagnostic.clone())?;
        Ok(StepOutcome::Aborted { diagnostic })
    }

    fn abort(&mut self, diagnostic: Diagnostic) -> Result<()> {
        let txn = self.record.txn_branch.clone().expect("active runs own a branch");
        self.repo.mark_aborted(&txn)?;
        self.record.diagnostics.push(diagnostic);
        self.record.status = RunStatus::Aborted;
        self.record.finished_at = Some(self.repo.now());
        self.repo.runs.append(&self.record)
    }

    /// Fails the run at its current position, as if the next node had
    /// crashed.
    pub fn fail(mut self) -> Result<RunRecord> {
        if self.is_finished() {
            return Err(Error::RunFinished(self.record.run_id.clone()));
        }
        let node = self.nodes.get(self.next).cloned().unwrap_or_default();
        let d = Diagnostic::error("InjectedFault", &node, "run failed on request");
        if node.is_empty() {
            self.abort(d)?;
        } else {
            self.next += 1;
            self.abort_at(&node, d)?;
        }
        Ok(self.record)
    }

    /// Runs the remaining nodes and, if all succeed, publishes the
    /// transactional branch into the target with a single head update.
    pub fn finish(mut self) -> Result<RunRecord> {
        if self.is_finished() {
            return Ok(self.record);
        }
        loop {
            match self.step()? {
                StepOutcome::Aborted { .. } => return Ok(self.record),
                StepOutcome::Complete => break,
                _ => {}
            }
        }
        // checkpoint so that a crash during publication can be settled
        self.repo.runs.append(&self.record)?;
        let txn = self.record.txn_branch.clone().expect("active runs own a branch");
        let target = self.record.target_branch.clone();
        let mut published = None;
        for _ in 0..PUBLISH_ATTEMPTS {
            let head = match self.repo.branch(&target) {
                Ok(b) => b.head,
                Err(e) => {
                    self.abort(Diagnostic::from_error("", &e))?;
                    break;
                }
            };
            match self.repo.merge_commit_into(&self.txn_head, &txn, &target, &head) {
                Ok(m) => {
                    published = Some(m.head);
                    break;
                }
                Err(Error::CasConflict { .. }) => continue,
                Err(e) => {
                    self.abort(Diagnostic::from_error("", &e))?;
                    break;
                }
            }
        }
        if self.is_finished() {
            return Ok(self.record);
        }
        let Some(head) = published else {
            self.abort(Diagnostic::error(
                "CasConflict",
                "",
                format!("`{target}` kept moving; gave up after {PUBLISH_ATTEMPTS} attempts"),
            ))?;
            return Ok(self.record);
        };
        self.repo.delete_branch(&txn)?;
        self.record.status = RunStatus::Committed;
        self.record.published_head = Some(head);
        self.record.finished_at = Some(self.repo.now());
        self.repo.runs.append(&self.record)?;
        Ok(self.record)
    }
}

/// Reorders an evaluated table into the declared column order and applies
/// the implicit int64 to float64 widening.
#[allow(clippy::result_large_err)]
fn conform(
    out: TableSnapshot,
    declared: &SchemaContract,
    node: &str,
) -> std::result::Result<TableSnapshot, Diagnostic> {
    let (schema, mut columns) = out.into_parts();
    for c in &schema.columns {
        if declared.column(&c.name).is_none() {
            return Err(Diagnostic::error(
                "ExtraColumn",
                node,
                format!("transform produced undeclared column `{}`", c.name),
            )
            .with_column(&c.name));
        }
    }
    let mut ordered = Vec::with_capacity(declared.columns.len());
    for c in &declared.columns {
        let Some(i) = schema.index_of(&c.name) else {
            return Err(Diagnostic::error(
                "MissingColumn",
                node,
                format!("transform did not produce declared column `{}`", c.name),
            )
            .with_column(&c.name));
        };
        let mut values = std::mem::take(&mut columns[i]);
        if c.ty.base == BaseType::Float64 {
            for v in &mut values {
                if let Value::Int(n) = *v {
                    *v = Value::Float(n as f64);
                }
            }
        }
        ordered.push(values);
    }
    TableSnapshot::new(declared.clone(), ordered).map_err(|e| Diagnostic::from_error(node, &e))
}

impl Repo {
    /// Runs the pipeline in `manifest` against branch `target`.
    ///
    /// Plan-time rejections and node failures are reported through the
    /// returned record; `Err` is reserved for unusable arguments and
    /// storage faults outside a run.
    pub fn run(&self, manifest: impl AsRef<Path>, target: &str, opts: RunOptions) -> Result<RunRecord> {
        let path = manifest.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        self.run_manifest(&text, &path.display().to_string(), target, opts)
    }

    pub fn run_manifest(&self, text: &str, file: &str, target: &str, opts: RunOptions) -> Result<RunRecord> {
        self.begin_run(text, file, target, opts)?.finish()
    }

    /// Checks the manifest and opens the transactional branch. A rejected
    /// run comes back already finished.
    pub fn begin_run(&self, text: &str, file: &str, target: &str, opts: RunOptions) -> Result<ActiveRun<'_>> {
        let head = self.normal_branch(target)?.head;
        let code_hash = self.store().put(text.as_bytes())?;
        self.begin_manifest(
            text,
            file,
            Begin {
                kind: RunKind::Manifest,
                target,
                start: head,
                code_hash,
                opts,
                resumed_from: None,
                reproduces: None,
                manifest_file: Some(file.to_string()),
            },
            HashSet::new(),
        )
    }

    /// Opens a run whose nodes write the given snapshots, in order. Each
    /// write is create-only.
    pub fn begin_fixed_run(
        &self,
        target: &str,
        outputs: Vec<(String, TableSnapshot)>,
        opts: RunOptions,
    ) -> Result<ActiveRun<'_>> {
        let head = self.normal_branch(target)?.head;
        let mut listing = String::from("fixed run\n");
        let mut seen = HashSet::new();
        for (t, s) in &outputs {
            crate::catalog::validate_name(t)?;
            if !seen.insert(t.clone()) {
                return Err(Error::DuplicateColumn(t.clone()));
            }
            listing.push_str(&format!(
                "{t} {}\n",
                crate::catalog::store::digest_hex(&s.encode_payload())
            ));
        }
        let names: Vec<String> = outputs.iter().map(|(t, _)| t.clone()).collect();
        check_fail_at(&opts, &names)?;
        let code_hash = self.store().put(listing.as_bytes())?;
        self.start(
            Program::Fixed(outputs),
            Begin {
                kind: RunKind::Fixed,
                target,
                start: head,
                code_hash,
                opts,
                resumed_from: None,
                reproduces: None,
                manifest_file: None,
            },
        )
    }

    fn normal_branch(&self, name: &str) -> Result<Branch> {
        let b = self.branch(name)?;
        if b.class != BranchClass::Normal {
            return Err(Error::NotNormalBranch(name.to_string()));
        }
        Ok(b)
    }

    fn begin_manifest(&self, text: &str, file: &str, begin: Begin<'_>, done: HashSet<String>) -> Result<ActiveRun<'_>> {
        let plan = match parse_manifest(text, file) {
            Ok(p) => p,
            Err(e) => return self.reject(begin, vec![Diagnostic::from_error("", &e)]),
        };
        check_fail_at(&begin.opts, &plan.node_names())?;
        let lake = self.source_schemas(&begin.start, &plan)?;
        let diagnostics = check_plan(&plan, &lake);
        if has_errors(&diagnostics) {
            return self.reject(begin, diagnostics);
        }
        let mut skips: HashMap<String, HashSet<String>> = HashMap::new();
        if begin.opts.skip_redundant_checks {
            for s in plan_validation_skips(&plan) {
                skips.entry(s.node).or_default().insert(s.column);
            }
        }
        let mut run = self.start(Program::Manifest { plan, skips, done }, begin)?;
        run.record.diagnostics = diagnostics;
        Ok(run)
    }

    /// Schemas of the plan's source tables at `at`; reads no row payloads.
    fn source_schemas(&self, at: &CommitId, plan: &PipelinePlan) -> Result<BTreeMap<String, SchemaContract>> {
        let tables = self.get_commit(at)?.tables;
        let mut out = BTreeMap::new();
        for name in plan.sources.keys() {
            if let Some(sid) = tables.get(name) {
                out.insert(name.clone(), self.snapshot_schema(sid)?);
            }
        }
        Ok(out)
    }

    /// Schemas of the source tables `manifest` expects, read from `at`.
    pub fn lake_schemas_for(&self, plan: &PipelinePlan, at: &Ref) -> Result<BTreeMap<String, SchemaContract>> {
        self.source_schemas(&self.resolve_ref(at)?, plan)
    }

    fn next_run_id(&self) -> String {
        let n = self.runs.next_counter();
        let suffix: u32 = self.rng.lock().unwrap().gen();
        format!("r{n:06}-{suffix:08x}")
    }

    fn new_record(&self, begin: Begin<'_>, status: RunStatus) -> RunRecord {
        RunRecord {
            run_id: self.next_run_id(),
            kind: begin.kind,
            target_branch: begin.target.to_string(),
            start_commit: begin.start,
            code_hash: begin.code_hash,
            txn_branch: None,
            status,
            node_results: Vec::new(),
            diagnostics: Vec::new(),
            options: begin.opts,
            resumed_from: begin.resumed_from,
            reproduces: begin.reproduces,
            manifest_file: begin.manifest_file,
            started_at: self.now(),
            finished_at: None,
            published_head: None,
        }
    }

    fn reject(&self, begin: Begin<'_>, diagnostics: Vec<Diagnostic>) -> Result<ActiveRun<'_>> {
        let mut record = self.new_record(begin, RunStatus::Rejected);
        record.diagnostics = diagnostics;
        record.finished_at = Some(record.started_at);
        self.runs.append(&record)?;
        let txn_head = record.start_commit.clone();
        Ok(ActiveRun {
            repo: self,
            program: Program::Fixed(Vec::new()),
            nodes: Vec::new(),
            record,
            txn_head,
            next: 0,
        })
    }

    fn start(&self, program: Program, begin: Begin<'_>) -> Result<ActiveRun<'_>> {
        let mut record = self.new_record(begin, RunStatus::Running);
        let txn = format!("{TXN_PREFIX}{}", record.run_id);
        record.txn_branch = Some(txn.clone());
        // registered before the branch exists so recovery always finds it
        self.runs.append(&record)?;
        self.create_branch_at(&txn, &record.start_commit, BranchClass::Transactional)?;
        let txn_head = record.start_commit.clone();
        Ok(ActiveRun {
            repo: self,
            nodes: program.node_names(),
            program,
            record,
            txn_head,
            next: 0,
        })
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord> {
        self.runs
            .get(run_id)
            .ok_or_else(|| Error::UnknownRun(run_id.to_string()))
    }

    /// Every run in start order, each in its latest state.
    pub fn list_runs(&self) -> Vec<RunRecord> {
        self.runs.list()
    }

    /// Archived manifest text of a run.
    pub fn run_manifest_text(&self, run_id: &str) -> Result<String> {
        let rec = self.get_run(run_id)?;
        let bytes = self
            .store()
            .get(&rec.code_hash)?
            .ok_or_else(|| Error::Corrupt(format!("archived manifest {} is missing", rec.code_hash)))?;
        String::from_utf8(bytes)
            .map_err(|_| Error::Corrupt(format!("archived manifest {} is not UTF-8", rec.code_hash)))
    }

    /// Creates `new_branch` at the run's start commit and executes the
    /// archived manifest on it with the original options.
    pub fn reproduce(&self, run_id: &str, new_branch: &str) -> Result<(Branch, RunRecord)> {
        let rec = self.get_run(run_id)?;
        if rec.kind != RunKind::Manifest {
            return Err(Error::NotReproducible(run_id.to_string()));
        }
        let text = self.run_manifest_text(run_id)?;
        let mut policy = self.policy();
        policy.allow_branch_from_aborted |= rec.options.allow_branch_from_aborted;
        self.create_branch_with_policy(new_branch, &Ref::commit(&rec.start_commit), BranchClass::Normal, policy)?;
        let code_hash = self.store().put(text.as_bytes())?;
        let file = rec.manifest_file.clone().unwrap_or_else(|| format!("run {run_id}"));
        let record = self
            .begin_manifest(
                &text,
                &file,
                Begin {
                    kind: RunKind::Manifest,
                    target: new_branch,
                    start: rec.start_commit.clone(),
                    code_hash,
                    opts: rec.options.clone(),
                    resumed_from: None,
                    reproduces: Some(run_id.to_string()),
                    manifest_file: Some(file.clone()),
                },
                HashSet::new(),
            )?
            .finish()?;
        Ok((self.branch(new_branch)?, record))
    }

    /// Starts a new run from the head of an aborted run's branch, skipping
    /// the nodes that run had already completed, and publishes into the
    /// original target.
    pub fn resume_from_aborted(&self, run_id: &str, fixed: impl AsRef<Path>, opts: RunOptions) -> Result<RunRecord> {
        let path = fixed.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
        self.resume_manifest(run_id, &text, &path.display().to_string(), opts)
    }

    pub fn resume_manifest(&self, run_id: &str, text: &str, file: &str, opts: RunOptions) -> Result<RunRecord> {
        if !opts.allow_branch_from_aborted {
            return Err(Error::GuardrailDisabled);
        }
        let rec = self.get_run(run_id)?;
        if rec.status != RunStatus::Aborted || rec.kind != RunKind::Manifest {
            return Err(Error::RunNotAborted(run_id.to_string()));
        }
        let txn = rec
            .txn_branch
            .as_deref()
            .ok_or_else(|| Error::RunNotAborted(run_id.to_string()))?;
        let aborted = self.branch(txn)?;
        let completed: Vec<&str> = rec
            .node_results
            .iter()
            .filter(|r| matches!(r.outcome, NodeOutcome::Ok { .. } | NodeOutcome::Skipped))
            .map(|r| r.node.as_str())
            .collect();
        let old = parse_manifest(&self.run_manifest_text(run_id)?, "archived")?;
        let new = parse_manifest(text, file)?;
        let changed: Vec<String> = completed
            .iter()
            .filter(|n| {
                let (a, b) = (old.node(n), new.node(n));
                !matches!((a, b), (Some(a), Some(b))
                    if a.source_text == b.source_text && a.declared_output == b.declared_output)
            })
            .map(|n| n.to_string())
            .collect();
        if !changed.is_empty() {
            return Err(Error::UpstreamManifestChanged(changed));
        }
        self.normal_branch(&rec.target_branch)?;
        let code_hash = self.store().put(text.as_bytes())?;
        self.begin_manifest(
            text,
            file,
            Begin {
                kind: RunKind::Manifest,
                target: &rec.target_branch,
                start: aborted.head,
                code_hash,
                opts,
                resumed_from: Some(run_id.to_string()),
                reproduces: None,
                manifest_file: Some(file.to_string()),
            },
            completed.iter().map(|n| n.to_string()).collect(),
        )?
        .finish()
    }

    /// Settles runs a crashed process left `running`: published ones are
    /// marked committed, all others aborted with their branch frozen.
    pub(crate) fn recover_orphaned_runs(&self) -> Result<()> {
        for mut rec in self.runs.running() {
            let branch = match &rec.txn_branch {
                Some(t) => self.try_branch(t)?,
                None => None,
            };
            let target_head = self.try_branch(&rec.target_branch)?.map(|b| b.head);
            let published = match (&branch, &target_head) {
                // only the pre-publication checkpoint carries node results
                (Some(b), Some(h)) if b.class == BranchClass::Transactional => {
                    !rec.node_results.is_empty()
                        && rec.failure().is_none()
                        && (&b.head == h || self.ancestors(h)?.contains(&b.head))
                }
                _ => false,
            };
            if published {
                let b = branch.expect("checked above");
                self.delete_branch(&b.name)?;
                rec.status = RunStatus::Committed;
                rec.published_head = target_head;
            } else {
                if let Some(b) = &branch {
                    self.mark_aborted(&b.name)?;
                }
                rec.status = RunStatus::Aborted;
                rec.diagnostics.push(Diagnostic::error(
                    "Interrupted",
                    "",
                    "the process running this pipeline exited before it finished",
                ));
            }
            rec.finished_at = Some(self.now());
            self.runs.append(&rec)?;
        }
        Ok(())
    }
}

fn check_fail_at(opts: &RunOptions, nodes: &[String]) -> Result<()> {
    match &opts.fail_at_node {
        Some(n) if !nodes.contains(n) => Err(Error::UnknownNode(n.clone())),
        _ => Ok(()),
    }
}
