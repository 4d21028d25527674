//! Static schema and lineage inference.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::contracts::{ColumnContract, SchemaContract};
use crate::error::{Error, Result};
use crate::lang::ast::{Expr, Transform};
use crate::types::{BaseType, ColumnType, Conversion};

/// A column of an input table: `table.column`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SourceColumn {
    pub table: String,
    pub column: String,
}

/// How a derived column relates to its sources. Ordered by precedence
/// when several steps compose: a cast anywhere makes the column a cast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivationKind {
    Identity,
    JoinKey,
    NotNull,
    Cast,
}

impl DerivationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DerivationKind::Identity => "identity",
            DerivationKind::JoinKey => "join-key",
            DerivationKind::NotNull => "notnull",
            DerivationKind::Cast => "cast",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Derivation {
    /// Computed by the transform; no single upstream column carries over.
    Fresh,
    From {
        sources: Vec<SourceColumn>,
        via: DerivationKind,
    },
}

impl Derivation {
    fn with_kind(&self, kind: DerivationKind) -> Derivation {
        match self {
            Derivation::Fresh => Derivation::Fresh,
            Derivation::From { sources, via } => Derivation::From {
                sources: sources.clone(),
                via: (*via).max(kind),
            },
        }
    }

    pub fn kind(&self) -> Option<DerivationKind> {
        match self {
            Derivation::Fresh => None,
            Derivation::From { via, .. } => Some(*via),
        }
    }

    pub fn sources(&self) -> &[SourceColumn] {
        match self {
            Derivation::Fresh => &[],
            Derivation::From { sources, .. } => sources,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InferredColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    pub derivation: Derivation,
}

/// Inferred output of a transform, columns in output order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InferredSchema {
    pub columns: Vec<InferredColumn>,
}

impl InferredSchema {
    pub fn column(&self, name: &str) -> Option<&InferredColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Contract with the inferred types and fresh origins.
    pub fn to_contract(&self, name: &str) -> Result<SchemaContract> {
        SchemaContract::new(
            name,
            self.columns
                .iter()
                .map(|c| ColumnContract::new(c.name.clone(), c.ty))
                .collect(),
        )
    }
}

/// Infers the output schema of `t`, given the schemas of the tables it reads.
pub fn infer_schema(t: &Transform, inputs: &BTreeMap<String, SchemaContract>) -> Result<InferredSchema> {
    Ok(InferredSchema {
        columns: infer(t, inputs)?,
    })
}

fn infer(t: &Transform, inputs: &BTreeMap<String, SchemaContract>) -> Result<Vec<InferredColumn>> {
    match t {
        Transform::Table(n) => table_step(n, inputs),
        Transform::Select { input, items } => select_step(&infer(input, inputs)?, items),
        Transform::Filter { input, predicate } => filter_step(&infer(input, inputs)?, predicate),
        Transform::Join { left, right, on } => join_step(&infer(left, inputs)?, &infer(right, inputs)?, on),
        Transform::Aggregate { input, group_by, aggs } => aggregate_step(&infer(input, inputs)?, group_by, aggs),
    }
}

pub(crate) fn table_step(name: &str, inputs: &BTreeMap<String, SchemaContract>) -> Result<Vec<InferredColumn>> {
    let schema = inputs.get(name).ok_or_else(|| Error::UnknownInput(name.to_string()))?;
    Ok(schema
        .columns
        .iter()
        .map(|c| InferredColumn {
            name: c.name.clone(),
            ty: c.ty,
            derivation: Derivation::From {
                sources: vec![SourceColumn {
                    table: name.to_string(),
                    column: c.name.clone(),
                }],
                via: DerivationKind::Identity,
            },
        })
        .collect())
}

fn lookup<'a>(scope: &'a [InferredColumn], name: &str) -> Result<&'a InferredColumn> {
    scope
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnknownColumn {
            name: name.to_string(),
            available: scope.iter().map(|c| c.name.clone()).collect(),
        })
}

fn mismatch(e: &Expr, expected: impl Into<String>, found: ColumnType) -> Error {
    Error::TypeMismatch {
        expr: e.to_string(),
        expected: expected.into(),
        found: found.to_string(),
    }
}

/// Type and derivation of a scalar expression.
pub(crate) fn infer_expr(e: &Expr, scope: &[InferredColumn]) -> Result<(ColumnType, Derivation)> {
    match e {
        Expr::Col(n) => {
            let c = lookup(scope, n)?;
            Ok((c.ty, c.derivation.clone()))
        }
        Expr::Lit(v, ty) => {
            if !v.conforms_to(*ty) {
                let found = match v.base_type() {
                    Some(b) => b.to_string(),
                    None => "null".to_string(),
                };
                return Err(Error::TypeMismatch {
                    expr: e.to_string(),
                    expected: ty.to_string(),
                    found,
                });
            }
            Ok((*ty, Derivation::Fresh))
        }
        Expr::Cast(inner, target) => {
            let (ty, d) = infer_expr(inner, scope)?;
            match ty.conversion_to(*target) {
                Conversion::Illegal => Err(mismatch(e, format!("a type castable to {target}"), ty)),
                Conversion::Narrowing => Ok((*target, d.with_kind(DerivationKind::Cast))),
                Conversion::Same | Conversion::Widening => Ok((*target, d)),
            }
        }
        Expr::Alias(..) => Err(Error::MisplacedExpr(format!(
            "alias `{e}` is only allowed on a projection item"
        ))),
        Expr::Sum(_) => Err(Error::MisplacedExpr(format!(
            "`{e}` is only allowed as an aggregate item"
        ))),
        Expr::IsNotNull(inner) => {
            infer_expr(inner, scope)?;
            Ok((ColumnType::required(BaseType::Bool), Derivation::Fresh))
        }
        Expr::Sub(a, b) => {
            let (ta, _) = infer_expr(a, scope)?;
            let (tb, _) = infer_expr(b, scope)?;
            for (x, t) in [(a, ta), (b, tb)] {
                if !t.base.is_numeric() {
                    return Err(mismatch(x, "int64 or float64", t));
                }
            }
            let base = if ta.base == BaseType::Int64 && tb.base == BaseType::Int64 {
                BaseType::Int64
            } else {
                BaseType::Float64
            };
            Ok((ColumnType::new(base, ta.nullable || tb.nullable), Derivation::Fresh))
        }
        Expr::Lt(a, b) => {
            let (ta, _) = infer_expr(a, scope)?;
            let (tb, _) = infer_expr(b, scope)?;
            let comparable = ta.base == tb.base || (ta.base.is_numeric() && tb.base.is_numeric());
            if !comparable {
                return Err(mismatch(b, format!("a value comparable with {}", ta.base), tb));
            }
            Ok((
                ColumnType::new(BaseType::Bool, ta.nullable || tb.nullable),
                Derivation::Fresh,
            ))
        }
        Expr::And(a, b) => {
            let (ta, _) = infer_expr(a, scope)?;
            let (tb, _) = infer_expr(b, scope)?;
            for (x, t) in [(a, ta), (b, tb)] {
                if t.base != BaseType::Bool {
                    return Err(mismatch(x, "bool", t));
                }
            }
            Ok((
                ColumnType::new(BaseType::Bool, ta.nullable || tb.nullable),
                Derivation::Fresh,
            ))
        }
    }
}

fn check_unique(cols: &[InferredColumn]) -> Result<()> {
    let mut seen = HashSet::new();
    for c in cols {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::DuplicateColumn(c.name.clone()));
        }
    }
    Ok(())
}

pub(crate) fn select_step(scope: &[InferredColumn], items: &[Expr]) -> Result<Vec<InferredColumn>> {
    if items.is_empty() {
        return Err(Error::MisplacedExpr("empty projection".into()));
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let name = item
            .implicit_name()
            .ok_or_else(|| Error::MissingAlias(item.to_string()))?
            .to_string();
        let (ty, derivation) = infer_expr(item.unaliased(), scope)?;
        out.push(InferredColumn { name, ty, derivation });
    }
    check_unique(&out)?;
    Ok(out)
}

/// Columns the predicate proves non-null: `c is not null` conjuncts.
pub(crate) fn not_null_columns(predicate: &Expr) -> Vec<&str> {
    match predicate {
        Expr::And(a, b) => {
            let mut v = not_null_columns(a);
            v.extend(not_null_columns(b));
            v
        }
        Expr::IsNotNull(inner) => match inner.as_ref() {
            Expr::Col(c) => vec![c.as_str()],
            _ => vec![],
        },
        _ => vec![],
    }
}

pub(crate) fn filter_step(scope: &[InferredColumn], predicate: &Expr) -> Result<Vec<InferredColumn>> {
    let (ty, _) = infer_expr(predicate, scope)?;
    if ty.base != BaseType::Bool {
        return Err(mismatch(predicate, "bool", ty));
    }
    let proven = not_null_columns(predicate);
    Ok(scope
        .iter()
        .map(|c| {
            if c.ty.nullable && proven.contains(&c.name.as_str()) {
                InferredColumn {
                    name: c.name.clone(),
                    ty: c.ty.with_nullable(false),
                    derivation: c.derivation.with_kind(DerivationKind::NotNull),
                }
            } else {
                c.clone()
            }
        })
        .collect())
}

pub(crate) fn join_step(
    left: &[InferredColumn],
    right: &[InferredColumn],
    on: &[String],
) -> Result<Vec<InferredColumn>> {
    if on.is_empty() {
        return Err(Error::MisplacedExpr("join needs at least one key column".into()));
    }
    let mut keys = HashSet::new();
    for k in on {
        if !keys.insert(k.as_str()) {
            return Err(Error::DuplicateColumn(k.clone()));
        }
        let l = lookup(left, k)?;
        let r = lookup(right, k)?;
        if l.ty.base != r.ty.base {
            return Err(Error::TypeMismatch {
                expr: format!("join key {k}"),
                expected: l.ty.base.to_string(),
                found: r.ty.base.to_string(),
            });
        }
    }
    let mut out = Vec::with_capacity(left.len() + right.len());
    for c in left {
        if keys.contains(c.name.as_str()) {
            let r = lookup(right, &c.name)?;
            let mut sources = c.derivation.sources().to_vec();
            for s in r.derivation.sources() {
                if !sources.contains(s) {
                    sources.push(s.clone());
                }
            }
            let derivation = if sources.is_empty() {
                Derivation::Fresh
            } else {
                let via = [c.derivation.kind(), r.derivation.kind(), Some(DerivationKind::JoinKey)]
                    .into_iter()
                    .flatten()
                    .max()
                    .unwrap();
                Derivation::From { sources, via }
            };
            out.push(InferredColumn {
                name: c.name.clone(),
                ty: c.ty,
                derivation,
            });
        } else {
            out.push(c.clone());
        }
    }
    for c in right {
        if !keys.contains(c.name.as_str()) {
            out.push(c.clone());
        }
    }
    check_unique(&out)?;
    Ok(out)
}

pub(crate) fn aggregate_step(
    scope: &[InferredColumn],
    group_by: &[String],
    aggs: &[Expr],
) -> Result<Vec<InferredColumn>> {
    if group_by.is_empty() && aggs.is_empty() {
        return Err(Error::MisplacedExpr("aggregate without groups or sums".into()));
    }
    let mut out = Vec::with_capacity(group_by.len() + aggs.len());
    for g in group_by {
        out.push(lookup(scope, g)?.clone());
    }
    for a in aggs {
        let Expr::Sum(inner) = a.unaliased() else {
            return Err(Error::MisplacedExpr(format!("`{a}` is not a sum(..) aggregate")));
        };
        let Expr::Alias(_, name) = a else {
            return Err(Error::MissingAlias(a.to_string()));
        };
        let (ty, _) = infer_expr(inner, scope)?;
        if !ty.base.is_numeric() {
            return Err(mismatch(inner, "int64 or float64", ty));
        }
        out.push(InferredColumn {
            name: name.clone(),
            ty,
            derivation: Derivation::Fresh,
        });
    }
    check_unique(&out)?;
    Ok(out)
}
