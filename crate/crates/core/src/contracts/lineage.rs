//! Column lineage through a plan.

use std::fmt;

use serde::Serialize;

use crate::contracts::{check_plan_detailed, PipelinePlan};
use crate::error::{Error, Result};
use crate::lang::{infer_schema, Derivation, DerivationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineageKind {
    Identity,
    Cast,
    NotNull,
    Fresh,
    JoinKey,
    /// A column of a source table; lineage stops here.
    Source,
}

impl LineageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LineageKind::Identity => "identity",
            LineageKind::Cast => "cast",
            LineageKind::NotNull => "notnull",
            LineageKind::Fresh => "fresh",
            LineageKind::JoinKey => "join-key",
            LineageKind::Source => "source",
        }
    }
}

/// One step of a column's history: how `node.column` was obtained from
/// the columns in `inputs`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineageTree {
    pub node: String,
    pub column: String,
    pub kind: LineageKind,
    pub inputs: Vec<LineageTree>,
}

impl LineageTree {
    fn render(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        writeln!(
            f,
            "{}{}.{} [{}]",
            "  ".repeat(depth),
            self.node,
            self.column,
            self.kind.as_str()
        )?;
        for i in &self.inputs {
            i.render(f, depth + 1)?;
        }
        Ok(())
    }

    /// Nodes along the first-input chain, starting at this one.
    pub fn chain(&self) -> Vec<(String, LineageKind)> {
        let mut out = vec![(self.node.clone(), self.kind)];
        let mut cur = self;
        while let Some(next) = cur.inputs.first() {
            out.push((next.node.clone(), next.kind));
            cur = next;
        }
        out
    }
}

impl fmt::Display for LineageTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.render(f, 0)
    }
}

/// Traces `node.column` back to source tables, using the manifest's
/// declared source schemas.
pub fn lineage(plan: &PipelinePlan, node: &str, column: &str) -> Result<LineageTree> {
    let node_contract = plan.node(node).ok_or_else(|| Error::UnknownNode(node.to_string()))?;
    let check = check_plan_detailed(plan, &plan.sources);
    let inferred = match check.inferred.get(node) {
        Some(s) => s.clone(),
        None => {
            // surface the node's own inference error
            let inputs = node_contract
                .inputs
                .iter()
                .filter_map(|i| {
                    plan.sources
                        .get(i)
                        .or_else(|| plan.node(i).map(|n| &n.declared_output))
                        .map(|s| (i.clone(), s.clone()))
                })
                .collect();
            infer_schema(&node_contract.transform, &inputs)?
        }
    };
    let col = inferred.column(column).ok_or_else(|| Error::UnknownColumn {
        name: column.to_string(),
        available: inferred.names(),
    })?;
    let (kind, sources) = match &col.derivation {
        Derivation::Fresh => (LineageKind::Fresh, Vec::new()),
        Derivation::From { sources, via } => (
            match via {
                DerivationKind::Identity => LineageKind::Identity,
                DerivationKind::Cast => LineageKind::Cast,
                DerivationKind::NotNull => LineageKind::NotNull,
                DerivationKind::JoinKey => LineageKind::JoinKey,
            },
            sources.clone(),
        ),
    };
    let mut inputs = Vec::with_capacity(sources.len());
    for s in sources {
        if plan.node(&s.table).is_some() {
            inputs.push(lineage(plan, &s.table, &s.column)?);
        } else {
            inputs.push(LineageTree {
                node: s.table,
                column: s.column,
                kind: LineageKind::Source,
                inputs: Vec::new(),
            });
        }
    }
    Ok(LineageTree {
        node: node.to_string(),
        column: column.to_string(),
        kind,
        inputs,
    })
}
