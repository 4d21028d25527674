//! Plain-text rendering of model states and traces.

use std::fmt::Write;

use crate::model::state::{ModelRunStatus, ModelState};
use crate::model::trace::Trace;

fn table_map(tables: &[Option<u8>]) -> String {
    let cells: Vec<String> = tables
        .iter()
        .enumerate()
        .filter_map(|(t, s)| s.map(|s| format!("t{t}=s{s}")))
        .collect();
    format!("{{{}}}", cells.join(", "))
}

/// Commit graph, newest first, with the branches pointing at each commit,
/// followed by the runs.
///
/// ```text
/// * c2 (b1, main) {t0=s0}         on txn/r1 <- c0
/// ```
pub fn render_state(s: &ModelState) -> String {
    let mut out = String::new();
    let mut order: Vec<usize> = (0..s.commits.len()).collect();
    // children before parents: sort by ancestry size, newest first
    order.sort_by_key(|&c| std::cmp::Reverse((s.ancestors(c as u8).len(), c)));
    let labels: Vec<String> = order
        .iter()
        .map(|&c| {
            let names: Vec<String> = s
                .branches
                .iter()
                .filter(|b| b.head as usize == c)
                .map(|b| {
                    let class = b.class.as_str();
                    if class == "normal" {
                        b.name.to_string()
                    } else {
                        format!("{} [{class}]", b.name)
                    }
                })
                .collect();
            if names.is_empty() {
                format!("c{c}")
            } else {
                format!("c{c} ({})", names.join(", "))
            }
        })
        .collect();
    let width = labels.iter().map(String::len).max().unwrap_or(0);
    for (&c, label) in order.iter().zip(&labels) {
        let commit = &s.commits[c];
        let origin = commit
            .origin
            .map(|o| format!("  on {o}"))
            .unwrap_or_else(|| "  root".to_string());
        let parents: Vec<String> = commit.parents.iter().map(|p| format!("c{p}")).collect();
        let parents = if parents.is_empty() {
            String::new()
        } else {
            format!(" <- {}", parents.join(" "))
        };
        writeln!(out, "* {label:<width$} {}{origin}{parents}", table_map(&commit.tables)).unwrap();
    }
    for (r, run) in s.runs.iter().enumerate() {
        let status = match run.status {
            ModelRunStatus::Running => "running",
            ModelRunStatus::Finished => "finished",
            ModelRunStatus::Failed => "failed",
        };
        writeln!(
            out,
            "run r{} on {}: {status} after {} step(s), began at c{}",
            r + 1,
            run.target,
            run.idx,
            run.begin
        )
        .unwrap();
    }
    out
}

/// Numbered actions followed by the final state.
pub fn render_trace(t: &Trace) -> String {
    let mut out = String::new();
    writeln!(out, "policy {}; bounds {}", t.policy, t.bounds).unwrap();
    if t.steps.is_empty() {
        writeln!(out, "(empty trace)").unwrap();
    }
    for (i, s) in t.steps.iter().enumerate() {
        writeln!(out, "{:>3}. {}", i + 1, s.action).unwrap();
    }
    out.push('\n');
    out.push_str(&render_state(&t.final_state()));
    out
}
