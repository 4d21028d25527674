//! Plan-time composition checking. Works purely on schemas.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::contracts::{ColumnOrigin, Diagnostic, PipelinePlan, SchemaContract};
use crate::lang::{infer_schema, DerivationKind, InferredColumn, InferredSchema};
use crate::types::Conversion;

/// Diagnostics plus the inferred output of every node that inferred
/// cleanly.
#[derive(Debug, Clone, Serialize)]
pub struct PlanCheck {
    pub diagnostics: Vec<Diagnostic>,
    pub inferred: BTreeMap<String, InferredSchema>,
}

impl PlanCheck {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(Diagnostic::is_error)
    }
}

/// Checks that the plan composes against the given source schemas. An
/// empty result means every node is well-typed and matches its declared
/// output.
pub fn check_plan(plan: &PipelinePlan, lake_schemas: &BTreeMap<String, SchemaContract>) -> Vec<Diagnostic> {
    check_plan_detailed(plan, lake_schemas).diagnostics
}

pub fn check_plan_detailed(plan: &PipelinePlan, lake_schemas: &BTreeMap<String, SchemaContract>) -> PlanCheck {
    let mut diags = Vec::new();
    let mut env: BTreeMap<String, SchemaContract> = BTreeMap::new();
    for (table, expected) in &plan.sources {
        match lake_schemas.get(table) {
            None => {
                diags.push(Diagnostic::error(
                    "MissingSource",
                    table,
                    format!("source table `{table}` is not in the lake"),
                ));
                env.insert(table.clone(), expected.clone());
            }
            Some(actual) => {
                source_drift(table, expected, actual, plan, &mut diags);
                // the lake's columns under the declared contract's name
                let bound = SchemaContract {
                    name: expected.name.clone(),
                    columns: actual.columns.clone(),
                };
                env.insert(table.clone(), bound);
            }
        }
    }
    for node in &plan.nodes {
        env.insert(node.name.clone(), node.declared_output.clone());
    }
    let mut inferred = BTreeMap::new();
    for node in &plan.nodes {
        let inputs: BTreeMap<String, SchemaContract> = node
            .inputs
            .iter()
            .filter_map(|i| env.get(i).map(|s| (i.clone(), s.clone())))
            .collect();
        match infer_schema(&node.transform, &inputs) {
            Err(e) => diags.push(Diagnostic::from_error(&node.name, &e).with_span(Some(node.span.clone()))),
            Ok(schema) => {
                compare_declared(plan, &node.name, &node.declared_output, &schema, &env, &mut diags);
                inferred.insert(node.name.clone(), schema);
            }
        }
    }
    PlanCheck {
        diagnostics: diags,
        inferred,
    }
}

fn source_drift(
    table: &str,
    expected: &SchemaContract,
    actual: &SchemaContract,
    plan: &PipelinePlan,
    diags: &mut Vec<Diagnostic>,
) {
    for c in &expected.columns {
        let span = plan.column_span(&expected.name, &c.name);
        match actual.column(&c.name) {
            None => diags.push(
                Diagnostic::error(
                    "SourceSchemaDrift",
                    table,
                    format!("lake table `{table}` has no column `{}` ({})", c.name, c.ty),
                )
                .with_column(&c.name)
                .with_span(span),
            ),
            Some(a) if !a.ty.assignable_to(c.ty) => diags.push(
                Diagnostic::error(
                    "SourceSchemaDrift",
                    table,
                    format!(
                        "lake column `{table}.{}` is {} but {} expects {}",
                        c.name, a.ty, expected.name, c.ty
                    ),
                )
                .with_column(&c.name)
                .with_span(span),
            ),
            Some(_) => {}
        }
    }
    for a in &actual.columns {
        if expected.column(&a.name).is_none() {
            diags.push(
                Diagnostic::warning(
                    "ExtraSourceColumn",
                    table,
                    format!(
                        "lake table `{table}` has column `{}` not declared in {}",
                        a.name, expected.name
                    ),
                )
                .with_column(&a.name),
            );
        }
    }
}

fn compare_declared(
    plan: &PipelinePlan,
    node: &str,
    declared: &SchemaContract,
    inferred: &InferredSchema,
    env: &BTreeMap<String, SchemaContract>,
    diags: &mut Vec<Diagnostic>,
) {
    let node_span = plan.node(node).map(|n| n.span.clone());
    for d in &declared.columns {
        let span = plan.column_span(&declared.name, &d.name).or_else(|| node_span.clone());
        let Some(i) = inferred.column(&d.name) else {
            diags.push(
                Diagnostic::error(
                    "MissingColumn",
                    node,
                    format!(
                        "{} declares `{}` but the transform does not produce it",
                        declared.name, d.name
                    ),
                )
                .with_column(&d.name)
                .with_span(span),
            );
            continue;
        };
        if !i.ty.assignable_to(d.ty) {
            let pass_through = matches!(
                i.derivation.kind(),
                Some(DerivationKind::Identity | DerivationKind::NotNull | DerivationKind::JoinKey)
            );
            let (code, message) = if pass_through && i.ty.conversion_to(d.ty) == Conversion::Narrowing {
                (
                    "IllegalNarrowing",
                    format!(
                        "column `{}` narrows {} to {} without an explicit cast",
                        d.name, i.ty, d.ty
                    ),
                )
            } else {
                (
                    "TypeMismatch",
                    format!(
                        "column `{}` is inferred as {} but {} declares {}",
                        d.name, i.ty, declared.name, d.ty
                    ),
                )
            };
            diags.push(
                Diagnostic::error(code, node, message)
                    .with_column(&d.name)
                    .with_span(span),
            );
            continue;
        }
        if let Some(w) = origin_mismatch(node, &d.name, &d.origin, i, env) {
            diags.push(w.with_span(span));
        }
    }
    for i in &inferred.columns {
        if declared.column(&i.name).is_none() {
            diags.push(
                Diagnostic::error(
                    "UndeclaredColumn",
                    node,
                    format!(
                        "the transform produces `{}`, which {} does not declare",
                        i.name, declared.name
                    ),
                )
                .with_column(&i.name)
                .with_span(node_span.clone()),
            );
        }
    }
}

/// Warning when a declared inheritance annotation disagrees with what the
/// transform actually does. Fresh declarations are never checked.
fn origin_mismatch(
    node: &str,
    column: &str,
    declared: &ColumnOrigin,
    inferred: &InferredColumn,
    env: &BTreeMap<String, SchemaContract>,
) -> Option<Diagnostic> {
    let path = declared.source()?;
    let warn = |msg: String| Some(Diagnostic::warning("OriginMismatch", node, msg).with_column(column));
    let Some(kind) = inferred.derivation.kind() else {
        return warn(format!(
            "`{column}` is declared as inherited from {path} but is computed fresh"
        ));
    };
    let from_schema = inferred.derivation.sources().iter().any(|s| {
        env.get(&s.table)
            .is_some_and(|schema| schema.name == path.schema && s.column == path.column)
    });
    if !from_schema {
        let found: Vec<String> = inferred
            .derivation
            .sources()
            .iter()
            .map(|s| format!("{}.{}", s.table, s.column))
            .collect();
        return warn(format!(
            "`{column}` is declared as inherited from {path} but derives from {}",
            found.join(", ")
        ));
    }
    let expected = match declared {
        ColumnOrigin::InheritedNarrowed(_) => DerivationKind::Cast,
        ColumnOrigin::InheritedNotNull(_) => DerivationKind::NotNull,
        _ => DerivationKind::Identity,
    };
    let actual = match kind {
        DerivationKind::JoinKey => DerivationKind::Identity,
        k => k,
    };
    if actual != expected {
        return warn(format!(
            "`{column}` is declared {} from {path} but the transform applies {}",
            match expected {
                DerivationKind::Cast => "narrowed",
                DerivationKind::NotNull => "not-null",
                _ => "unchanged",
            },
            kind.as_str()
        ));
    }
    None
}
