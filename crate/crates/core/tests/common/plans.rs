//! Random pipelines over a random source table. The generator tracks
//! column types on its own, declares each node's output from that, and
//! sometimes perturbs the declaration so that some plans fail the check.

use lakekit::contracts::SchemaContract;
use lakekit::{BaseType, ColumnType, TableSnapshot, Value};
use rand::seq::SliceRandom;
use rand::Rng;

use super::T0;

pub const SOURCE: &str = "src";

#[derive(Debug, Clone)]
pub struct GenPlan {
    pub manifest: String,
    /// Node names in manifest order, which is also dependency order.
    pub nodes: Vec<String>,
    pub source: TableSnapshot,
}

#[derive(Debug, Clone)]
struct Col {
    name: String,
    ty: ColumnType,
}

const BASES: [BaseType; 5] = [
    BaseType::Int64,
    BaseType::Float64,
    BaseType::String,
    BaseType::Timestamp,
    BaseType::Bool,
];

fn type_text(ty: ColumnType) -> String {
    if ty.nullable {
        format!("{} nullable", ty.base)
    } else {
        ty.base.to_string()
    }
}

fn literal(rng: &mut impl Rng, base: BaseType, nullable: bool) -> String {
    if nullable && rng.gen_bool(0.5) {
        return format!("null::{base}?");
    }
    let text = match base {
        BaseType::Int64 => rng.gen_range(-3..6).to_string(),
        BaseType::Float64 => format!("{:.1}", rng.gen_range(-8..8) as f64 / 2.0),
        BaseType::String => ["'x'", "'2024-03-01'", "''"].choose(rng).unwrap().to_string(),
        BaseType::Timestamp => "timestamp '2023-11-14T22:13:20Z'".to_string(),
        BaseType::Bool => ["true", "false"].choose(rng).unwrap().to_string(),
    };
    if nullable {
        format!("{text}::{base}?")
    } else {
        text
    }
}

fn expr(rng: &mut impl Rng, scope: &[Col], depth: u32) -> (String, ColumnType) {
    let pick = if depth == 0 {
        rng.gen_range(0..3)
    } else {
        rng.gen_range(0..9)
    };
    match pick {
        0 | 1 => {
            let c = scope.choose(rng).unwrap();
            (c.name.clone(), c.ty)
        }
        2 => {
            let base = *BASES.choose(rng).unwrap();
            let nullable = rng.gen_bool(0.2);
            (literal(rng, base, nullable), ColumnType::new(base, nullable))
        }
        3 => {
            let (a, ta) = typed(rng, scope, depth - 1, |b| b.is_numeric());
            let (b, tb) = typed(rng, scope, depth - 1, |b| b.is_numeric());
            let base = if ta.base == BaseType::Int64 && tb.base == BaseType::Int64 {
                BaseType::Int64
            } else {
                BaseType::Float64
            };
            (
                format!("({a} - {b})"),
                ColumnType::new(base, ta.nullable || tb.nullable),
            )
        }
        4 => {
            let (a, ta) = expr(rng, scope, depth - 1);
            let (b, tb) = typed(rng, scope, depth - 1, |b| {
                b == ta.base || (b.is_numeric() && ta.base.is_numeric())
            });
            (
                format!("({a} < {b})"),
                ColumnType::new(BaseType::Bool, ta.nullable || tb.nullable),
            )
        }
        5 => {
            let (a, _) = expr(rng, scope, depth - 1);
            (format!("({a} is not null)"), ColumnType::required(BaseType::Bool))
        }
        6 => {
            let (a, ta) = typed(rng, scope, depth - 1, |b| b == BaseType::Bool);
            let (b, tb) = typed(rng, scope, depth - 1, |b| b == BaseType::Bool);
            (
                format!("({a} and {b})"),
                ColumnType::new(BaseType::Bool, ta.nullable || tb.nullable),
            )
        }
        _ => {
            let (a, ta) = expr(rng, scope, depth - 1);
            let mut targets = vec![ta.base];
            match ta.base {
                BaseType::Int64 => targets.push(BaseType::Float64),
                BaseType::Float64 => targets.push(BaseType::Int64),
                BaseType::String => targets.push(BaseType::Timestamp),
                _ => {}
            }
            let base = *targets.choose(rng).unwrap();
            // dropping nullability is legal with a cast but can fail at run time
            let nullable = if ta.nullable {
                rng.gen_bool(0.8)
            } else {
                rng.gen_bool(0.2)
            };
            let target = ColumnType::new(base, nullable);
            let written = if nullable { format!("{base}?") } else { base.to_string() };
            (format!("cast({a} as {written})"), target)
        }
    }
}

/// An expression whose base type satisfies `want`, falling back to a literal.
fn typed(rng: &mut impl Rng, scope: &[Col], depth: u32, want: impl Fn(BaseType) -> bool) -> (String, ColumnType) {
    for _ in 0..8 {
        let (e, t) = expr(rng, scope, depth);
        if want(t.base) {
            return (e, t);
        }
    }
    let base = *BASES
        .iter()
        .filter(|b| want(**b))
        .collect::<Vec<_>>()
        .choose(rng)
        .unwrap();
    (literal(rng, *base, false), ColumnType::required(*base))
}

/// Applies an optional `where` to `scope` and returns the clause.
fn filter(rng: &mut impl Rng, scope: &mut [Col]) -> String {
    if rng.gen_bool(0.5) {
        return String::new();
    }
    let nullable: Vec<usize> = (0..scope.len()).filter(|&i| scope[i].ty.nullable).collect();
    let mut conjuncts = Vec::new();
    if let Some(&i) = nullable.choose(rng) {
        if rng.gen_bool(0.7) {
            conjuncts.push(format!("{} is not null", scope[i].name));
            scope[i].ty = scope[i].ty.with_nullable(false);
        }
    }
    if conjuncts.is_empty() || rng.gen_bool(0.4) {
        let (p, _) = typed(rng, scope, 2, |b| b == BaseType::Bool);
        conjuncts.push(p);
    }
    format!(" where {}", conjuncts.join(" and "))
}

fn random_value(rng: &mut impl Rng, ty: ColumnType) -> Value {
    if ty.nullable && rng.gen_bool(0.3) {
        return Value::Null;
    }
    match ty.base {
        BaseType::Int64 => Value::Int(rng.gen_range(-20..20)),
        BaseType::Float64 => Value::Float(rng.gen_range(-40..40) as f64 / 4.0),
        BaseType::String => Value::Str(["a", "2024-01-02", "zz", ""].choose(rng).unwrap().to_string()),
        BaseType::Timestamp => Value::Timestamp(T0 + rng.gen_range(0..4) * 1_000_000),
        BaseType::Bool => Value::Bool(rng.gen()),
    }
}

fn source(rng: &mut impl Rng) -> (Vec<Col>, TableSnapshot) {
    let mut cols = vec![Col {
        name: "k".into(),
        ty: ColumnType::required(BaseType::String),
    }];
    for i in 0..rng.gen_range(1..=3) {
        cols.push(Col {
            name: format!("c{i}"),
            ty: ColumnType::new(*BASES.choose(rng).unwrap(), rng.gen_bool(0.4)),
        });
    }
    let schema = SchemaContract::of(
        "SrcSchema",
        &cols.iter().map(|c| (c.name.as_str(), c.ty)).collect::<Vec<_>>(),
    );
    let rows = (0..rng.gen_range(0..=10))
        .map(|_| {
            let mut row = vec![Value::Str(["a", "b", "c"].choose(rng).unwrap().to_string())];
            row.extend(cols[1..].iter().map(|c| random_value(rng, c.ty)));
            row
        })
        .collect();
    (cols, TableSnapshot::from_rows(schema, rows).unwrap())
}

/// Declared type for an inferred one: usually exact, sometimes widened,
/// rarely narrowed.
fn declare(rng: &mut impl Rng, ty: ColumnType) -> ColumnType {
    let roll: f64 = rng.gen();
    if roll < 0.10 {
        ty.with_nullable(true)
    } else if roll < 0.15 && ty.base == BaseType::Int64 {
        ColumnType::new(BaseType::Float64, ty.nullable)
    } else if roll < 0.18 && ty.base == BaseType::Float64 {
        ColumnType::new(BaseType::Int64, ty.nullable)
    } else if roll < 0.21 {
        ty.with_nullable(false)
    } else {
        ty
    }
}

/// A plan of `1..=max_nodes` nodes. Every table carries a non-null
/// string key `k`, used for joins and grouping.
pub fn random_plan(rng: &mut impl Rng, max_nodes: usize) -> GenPlan {
    let (src_cols, source) = source(rng);
    let mut text = format!("source {SOURCE}: SrcSchema\nschema SrcSchema {{\n");
    for c in &src_cols {
        text.push_str(&format!("    {}: {}\n", c.name, type_text(c.ty)));
    }
    text.push_str("}\n");
    let mut tables: Vec<(String, Vec<Col>)> = vec![(SOURCE.to_string(), src_cols)];
    let mut nodes = Vec::new();
    for i in 0..rng.gen_range(1..=max_nodes) {
        let name = format!("n{i}");
        let (primary, pcols) = tables.choose(rng).unwrap().clone();
        let mut inputs = vec![primary.clone()];
        let mut scope = pcols.clone();
        let mut from = primary.clone();
        let form = rng.gen_range(0..10);
        if form >= 7 && tables.len() > 1 {
            let (other, ocols) = tables
                .iter()
                .filter(|(t, _)| *t != primary)
                .collect::<Vec<_>>()
                .choose(rng)
                .map(|t| (*t).clone())
                .unwrap();
            let mut items = vec!["k".to_string()];
            for c in ocols.iter().filter(|c| c.name != "k") {
                let renamed = format!("{other}_{}", c.name);
                items.push(format!("{} as {renamed}", c.name));
                scope.push(Col {
                    name: renamed,
                    ty: c.ty,
                });
            }
            from = format!("{primary} join (select {} from {other}) on k", items.join(", "));
            inputs.push(other);
        }
        let clause = filter(rng, &mut scope);
        let mut out = vec![Col {
            name: "k".into(),
            ty: ColumnType::required(BaseType::String),
        }];
        let query = if form < 3 {
            let mut sums = Vec::new();
            for j in 0..rng.gen_range(1..=2) {
                let (e, t) = typed(rng, &scope, 2, |b| b.is_numeric());
                sums.push(format!("sum({e}) as s{j}"));
                out.push(Col {
                    name: format!("s{j}"),
                    ty: t,
                });
            }
            format!("select k, {} from {from}{clause} group by k", sums.join(", "))
        } else {
            let mut items = vec!["k".to_string()];
            for j in 0..rng.gen_range(1..=3) {
                let (e, t) = expr(rng, &scope, 2);
                items.push(format!("{e} as o{j}"));
                out.push(Col {
                    name: format!("o{j}"),
                    ty: t,
                });
            }
            format!("select {} from {from}{clause}", items.join(", "))
        };
        let schema = format!("N{i}");
        text.push_str(&format!("schema {schema} {{\n"));
        for c in &mut out {
            if c.name != "k" {
                c.ty = declare(rng, c.ty);
            }
            text.push_str(&format!("    {}: {}\n", c.name, type_text(c.ty)));
        }
        text.push_str("}\n");
        text.push_str(&format!("-- {name}: {schema} <- {}\n{query}\n", inputs.join(", ")));
        tables.push((name.clone(), out));
        nodes.push(name);
    }
    GenPlan {
        manifest: text,
        nodes,
        source,
    }
}
