use std::fs;
use std::path::Path;
use std::sync::Arc;

use lakekit::catalog::FixedClock;
use lakekit::contracts::{check_plan, has_errors, lineage, load_manifest, Diagnostic};
use lakekit::model::{self, Bounds, CheckOutcome, Invariant, ModelPolicy, Trace};
use lakekit::run::{NodeOutcome, RunOptions, RunRecord, RunStatus};
use lakekit::{BranchClass, Policy, Ref, Repo, RepoOptions};
use serde_json::{json, Value as Json};

use crate::csv_import;
use crate::output::{text_table, Failure, Output};
use crate::{BoundsArgs, BranchCommand, Cli, Command, Guardrail, ModelCommand, PolicyFlags, RunFlags, RunsCommand};

type Res = Result<Output, Failure>;

fn env_i64(name: &str) -> Result<Option<i64>, Failure> {
    match std::env::var(name) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::usage("InvalidEnvironment", format!("{name} must be an integer, got `{v}`"))),
    }
}

/// Repository options from the policy flags plus `LAKEKIT_NOW` (epoch
/// seconds for every timestamp) and `LAKEKIT_SEED` (run-id suffixes).
fn repo_options(policy: PolicyFlags) -> Result<RepoOptions, Failure> {
    let mut o = RepoOptions::default().with_policy(Policy {
        allow_branch_from_aborted: policy.allow_branch_from_aborted,
        allow_merge_from_aborted: policy.allow_merge_from_aborted,
    });
    if let Some(t) = env_i64("LAKEKIT_NOW")? {
        o = o.with_clock(Arc::new(FixedClock::new(t)));
    }
    if let Some(s) = env_i64("LAKEKIT_SEED")? {
        o = o.with_seed(s as u64);
    }
    Ok(o)
}

fn parse_ref(spec: &str) -> Result<Ref, Failure> {
    spec.parse::<Ref>().map_err(Failure::from)
}

fn run_options(policy: PolicyFlags, flags: &RunFlags) -> RunOptions {
    RunOptions {
        fail_at_node: flags.fail_at.clone(),
        allow_branch_from_aborted: policy.allow_branch_from_aborted,
        allow_merge_from_aborted: policy.allow_merge_from_aborted,
        skip_redundant_checks: !flags.validate_all,
    }
}

pub fn dispatch(cli: Cli) -> Res {
    if let Command::Model(m) = cli.command {
        return model_command(m);
    }
    let options = repo_options(cli.policy)?;
    if let Command::Init = cli.command {
        let repo = Repo::init(&cli.repo, options)?;
        let head = repo.branch(lakekit::MAIN)?.head;
        return Ok(Output::ok(
            format!("initialized empty repository at {}\n", cli.repo.display()),
            json!({"root": cli.repo, "main": head}),
        ));
    }
    let repo = Repo::open(&cli.repo, options)?;
    let policy = cli.policy;
    match cli.command {
        Command::Init | Command::Model(_) => unreachable!("handled above"),
        Command::Import { table, csv, branch } => import(&repo, &table, &csv, &branch),
        Command::Branch(b) => branch_command(&repo, b),
        Command::Tag { name, target } => {
            let tag = repo.tag_commit(&name, &parse_ref(&target)?)?;
            let aborted = repo.is_aborted_lineage(&tag.target)?;
            let mut out = Output::ok(
                format!("tagged {} as {name}\n", tag.target.short()),
                json!({"tag": tag, "aborted_lineage": aborted}),
            );
            if aborted {
                out = out.warn(format!(
                    "tag `{name}` points at a commit only reachable through aborted branches"
                ));
            }
            Ok(out)
        }
        Command::Log { target, limit } => {
            let entries = repo.log(&parse_ref(&target)?, limit)?;
            let rows: Vec<Vec<String>> = entries
                .iter()
                .map(|e| {
                    vec![
                        e.id.short().to_string(),
                        e.commit.timestamp.to_string(),
                        e.commit.tables.len().to_string(),
                        e.commit.message.clone(),
                    ]
                })
                .collect();
            Ok(Output::ok(
                text_table(&["COMMIT", "TIME", "TABLES", "MESSAGE"], &rows),
                json!(entries),
            ))
        }
        Command::Diff { from, to } => {
            let d = repo.diff(&parse_ref(&from)?, &parse_ref(&to)?)?;
            let mut text = String::new();
            for t in &d.added {
                text.push_str(&format!("+ {t}\n"));
            }
            for t in &d.removed {
                text.push_str(&format!("- {t}\n"));
            }
            for c in &d.changed {
                text.push_str(&format!("~ {} {} -> {}\n", c.table, c.from.short(), c.to.short()));
            }
            if d.is_empty() {
                text.push_str("no differences\n");
            }
            Ok(Output::ok(text, json!(d)))
        }
        Command::Merge { source, into } => {
            let head = repo.branch(&into)?.head;
            let r = repo.merge(&parse_ref(&source)?, &into, &head)?;
            Ok(Output::ok(
                format!(
                    "merged {source} into {into}: {} -> {}\n",
                    r.kind.as_str(),
                    r.head.short()
                ),
                json!({"source": source, "into": into, "result": r}),
            ))
        }
        Command::Query { target, table, limit } => query(&repo, &target, &table, limit),
        Command::Check { manifest, at } => check(&repo, &manifest, &at),
        Command::Run { manifest, target, run } => {
            let rec = repo.run(&manifest, &target, run_options(policy, &run))?;
            Ok(run_output(&rec))
        }
        Command::Runs(RunsCommand::Show { run_id }) => Ok(run_output(&repo.get_run(&run_id)?).with_exit(0)),
        Command::Runs(RunsCommand::List) => {
            let runs = repo.list_runs();
            let rows: Vec<Vec<String>> = runs
                .iter()
                .map(|r| {
                    vec![
                        r.run_id.clone(),
                        r.status.as_str().to_string(),
                        r.target_branch.clone(),
                        r.txn_branch.clone().unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            Ok(Output::ok(
                text_table(&["RUN", "STATUS", "TARGET", "BRANCH"], &rows),
                json!(runs),
            ))
        }
        Command::Reproduce { run_id, branch } => {
            let original = repo.get_run(&run_id)?;
            let (b, rec) = repo.reproduce(&run_id, &branch)?;
            let same = same_outcome(&original, &rec);
            let mut out = run_output(&rec);
            out.text = format!(
                "reproduced {run_id} on {} from {}: {}\n{}",
                b.name,
                b.created_from.short(),
                if same { "identical outcome" } else { "DIFFERENT outcome" },
                out.text
            );
            out.json = json!({"original": run_id, "branch": b, "identical": same, "run": rec});
            Ok(out.with_exit(if same { 0 } else { 1 }))
        }
        Command::Resume { run_id, manifest, run } => {
            let rec = repo.resume_from_aborted(&run_id, &manifest, run_options(policy, &run))?;
            Ok(run_output(&rec))
        }
        Command::Lineage { manifest, node, column } => {
            let plan = load_manifest(&manifest)?;
            let tree = lineage(&plan, &node, &column)?;
            Ok(Output::ok(tree.to_string(), json!(tree)))
        }
    }
}

fn import(repo: &Repo, table: &str, csv: &Path, branch: &str) -> Res {
    let snap = csv_import::read_csv(csv, table).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let head = repo.branch(branch)?.head;
    let entry = repo.write_table(branch, table, &snap, &head)?;
    let sid = &entry.commit.tables[table];
    Ok(Output::ok(
        format!(
            "imported {} rows into {table} on {branch}\nsnapshot {}\ncommit   {}\n",
            snap.row_count(),
            sid,
            entry.id
        ),
        json!({"table": table, "branch": branch, "rows": snap.row_count(), "snapshot": sid, "commit": entry.id}),
    ))
}

fn branch_command(repo: &Repo, cmd: BranchCommand) -> Res {
    match cmd {
        BranchCommand::Create { name, from } => {
            let b = repo.create_branch(&name, &parse_ref(&from)?, BranchClass::Normal)?;
            Ok(Output::ok(
                format!("created {name} at {} from {from}\n", b.head.short()),
                json!(b),
            ))
        }
        BranchCommand::List => {
            let branches = repo.list_branches()?;
            let rows: Vec<Vec<String>> = branches
                .iter()
                .map(|b| vec![b.name.clone(), b.class.to_string(), b.head.short().to_string()])
                .collect();
            Ok(Output::ok(
                text_table(&["BRANCH", "CLASS", "HEAD"], &rows),
                json!(branches),
            ))
        }
        BranchCommand::Delete { name } => {
            repo.delete_branch(&name)?;
            Ok(Output::ok(format!("deleted {name}\n"), json!({"deleted": name})))
        }
    }
}

fn query(repo: &Repo, target: &str, table: &str, limit: Option<usize>) -> Res {
    let r = parse_ref(target)?;
    let sid = repo.snapshot_id(&r, table)?;
    let snap = repo.read_snapshot(&sid)?;
    let n = limit.unwrap_or(usize::MAX).min(snap.row_count());
    let headers: Vec<String> = snap.schema().columns.iter().map(|c| c.name.clone()).collect();
    let rows: Vec<Vec<String>> = snap
        .rows()
        .take(n)
        .map(|r| r.iter().map(|v| v.render()).collect())
        .collect();
    let hdr: Vec<&str> = headers.iter().map(String::as_str).collect();
    let mut text = text_table(&hdr, &rows);
    if n < snap.row_count() {
        text.push_str(&format!("({} of {} rows)\n", n, snap.row_count()));
    }
    let json_rows: Vec<Vec<Json>> = snap
        .rows()
        .take(n)
        .map(|r| r.iter().map(|v| v.to_json()).collect())
        .collect();
    let schema: Vec<Json> = snap
        .schema()
        .columns
        .iter()
        .map(|c| json!({"name": c.name, "type": c.ty.to_string()}))
        .collect();
    Ok(Output::ok(
        text,
        json!({"ref": target, "table": table, "snapshot": sid, "row_count": snap.row_count(), "columns": schema, "rows": json_rows}),
    ))
}

fn render_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("{d}\n")).collect()
}

fn check(repo: &Repo, manifest: &Path, at: &str) -> Res {
    let plan = load_manifest(manifest)?;
    let lake = repo.lake_schemas_for(&plan, &parse_ref(at)?)?;
    let diags = check_plan(&plan, &lake);
    let failed = has_errors(&diags);
    let mut text = render_diagnostics(&diags);
    if !failed {
        text.push_str(&format!("ok: {} nodes check against {at}\n", plan.nodes.len()));
    }
    Ok(Output::ok(text, json!({"ref": at, "ok": !failed, "diagnostics": diags})).with_exit(u8::from(failed)))
}

fn run_output(rec: &RunRecord) -> Output {
    let mut text = format!("run {} {} on {}\n", rec.run_id, rec.status.as_str(), rec.target_branch);
    let rows: Vec<Vec<String>> = rec
        .node_results
        .iter()
        .map(|r| match &r.outcome {
            NodeOutcome::Ok { snapshot, .. } => vec![r.node.clone(), "ok".into(), snapshot.short().to_string()],
            NodeOutcome::Failed { diagnostic } => vec![r.node.clone(), "failed".into(), diagnostic.message.clone()],
            NodeOutcome::Skipped => vec![r.node.clone(), "skipped".into(), String::new()],
        })
        .collect();
    if !rows.is_empty() {
        for line in text_table(&["NODE", "RESULT", "DETAIL"], &rows).lines() {
            text.push_str(&format!("  {line}\n"));
        }
    }
    text.push_str(&render_diagnostics(&rec.diagnostics));
    if let Some(b) = &rec.txn_branch {
        if rec.status == RunStatus::Aborted {
            text.push_str(&format!("partial outputs kept on {b} (aborted, read-only)\n"));
        }
    }
    if let Some(h) = &rec.published_head {
        text.push_str(&format!("published {}\n", h.short()));
    }
    let exit = if rec.status == RunStatus::Committed { 0 } else { 1 };
    Output::ok(text, json!(rec)).with_exit(exit)
}

/// Same status, same output snapshots, and the same failure diagnostic.
fn same_outcome(a: &RunRecord, b: &RunRecord) -> bool {
    let outputs = |r: &RunRecord| -> Vec<(String, Option<String>)> {
        r.node_results
            .iter()
            .map(|n| (n.node.clone(), r.output(&n.node).map(|s| s.to_string())))
            .collect()
    };
    let failure = |r: &RunRecord| r.failure().map(|d| (d.code.clone(), d.node.clone(), d.message.clone()));
    a.status == b.status && outputs(a) == outputs(b) && failure(a) == failure(b) && a.diagnostics == b.diagnostics
}

fn bounds_of(b: &BoundsArgs) -> Result<(Bounds, ModelPolicy), Failure> {
    let bounds = Bounds::new(b.tables, b.snapshots, b.commits, b.branches, b.runs, b.steps);
    bounds.validate()?;
    let policy = match b.guardrail {
        Guardrail::On => ModelPolicy::GuardrailOn,
        Guardrail::Off => ModelPolicy::GuardrailOff,
        Guardrail::Open => ModelPolicy::Open,
    };
    Ok((bounds, policy))
}

fn model_command(cmd: ModelCommand) -> Res {
    match cmd {
        ModelCommand::Enumerate { bounds } => {
            let (b, p) = bounds_of(&bounds)?;
            let e = model::enumerate_with_cap(&b, p, bounds.cap)?;
            let depths: Vec<String> = e.per_depth.iter().map(|d| d.to_string()).collect();
            Ok(Output::ok(
                format!(
                    "bounds {b}\nguardrail {p}\nstates {}\ntransitions {}\nnew states per depth {}\nfrontier at step limit {}\n",
                    e.states,
                    e.transitions,
                    depths.join(" "),
                    e.frontier_at_limit
                ),
                json!(e),
            ))
        }
        ModelCommand::Check {
            invariant,
            bounds,
            script_out,
        } => {
            let inv: Invariant = invariant.parse()?;
            let (b, p) = bounds_of(&bounds)?;
            match model::check_with_cap(inv, &b, p, bounds.cap)? {
                CheckOutcome::Ok { states, transitions } => Ok(Output::ok(
                    format!("ok: {inv} holds in all {states} states ({transitions} transitions) within {b}, guardrail {p}\n"),
                    json!({"invariant": inv, "bounds": b, "guardrail": p, "result": "ok", "states": states, "transitions": transitions}),
                )),
                CheckOutcome::Counterexample { violation, trace } => {
                    let script = trace.to_script();
                    if let Some(path) = script_out {
                        fs::write(&path, &script)
                            .map_err(|e| Failure::new("Io", format!("writing {}: {e}", path.display())))?;
                    }
                    Ok(Output::ok(
                        format!(
                            "counterexample to {inv} in {} steps: {violation}\n\n{}",
                            trace.len(),
                            model::render_trace(&trace)
                        ),
                        json!({
                            "invariant": inv,
                            "bounds": b,
                            "guardrail": p,
                            "result": "counterexample",
                            "violation": violation,
                            "actions": trace.actions().iter().map(|a| a.to_string()).collect::<Vec<_>>(),
                            "script": script,
                        }),
                    )
                    .with_exit(1))
                }
            }
        }
        ModelCommand::Replay { script } => {
            let text = fs::read_to_string(&script)
                .map_err(|e| Failure::usage("Io", format!("reading {}: {e}", script.display())))?;
            let trace = Trace::parse_script(&text)?;
            let report = model::replay_fresh(&trace)?;
            let rows: Vec<Vec<String>> = report
                .branches
                .iter()
                .map(|(name, tables)| {
                    let t: Vec<String> = tables.iter().map(|(t, s)| format!("{t}={}", s.short())).collect();
                    vec![name.clone(), report.classes[name].to_string(), t.join(" ")]
                })
                .collect();
            Ok(Output::ok(
                format!(
                    "replayed {} steps with no divergence\n{}",
                    report.steps,
                    text_table(&["BRANCH", "CLASS", "TABLES"], &rows)
                ),
                json!(report),
            ))
        }
    }
}
