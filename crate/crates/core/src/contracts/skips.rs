//! Runtime checks the plan makes redundant.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::contracts::{check_plan_detailed, PipelinePlan};
use crate::lang::{Derivation, DerivationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    NonNull,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SkippableCheck {
    pub node: String,
    pub column: String,
    pub check: CheckKind,
}

/// Non-null checks that cannot fail: the column is an unchanged copy of a
/// single non-null column of an upstream node, whose own output is
/// validated (or itself provably non-null) before this node runs.
pub fn plan_validation_skips(plan: &PipelinePlan) -> BTreeSet<SkippableCheck> {
    let check = check_plan_detailed(plan, &plan.sources);
    let mut out = BTreeSet::new();
    if check.has_errors() {
        return out;
    }
    for node in &plan.nodes {
        let Some(inferred) = check.inferred.get(&node.name) else {
            continue;
        };
        for declared in &node.declared_output.columns {
            if declared.ty.nullable {
                continue;
            }
            let Some(col) = inferred.column(&declared.name) else {
                continue;
            };
            let Derivation::From {
                sources,
                via: DerivationKind::Identity,
            } = &col.derivation
            else {
                continue;
            };
            let [src] = sources.as_slice() else { continue };
            let Some(upstream) = plan.node(&src.table) else {
                continue;
            };
            let upstream_non_null = upstream
                .declared_output
                .column(&src.column)
                .is_some_and(|c| !c.ty.nullable);
            if upstream_non_null {
                out.insert(SkippableCheck {
                    node: node.name.clone(),
                    column: declared.name.clone(),
                    check: CheckKind::NonNull,
                });
            }
        }
    }
    out
}
