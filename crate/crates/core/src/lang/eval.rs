//! Deterministic evaluation over in-memory snapshots.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use crate::contracts::{validate_data, ColumnContract, SchemaContract};
use crate::error::{Error, Result};
use crate::lang::ast::{Expr, Transform};
use crate::lang::infer::{aggregate_step, filter_step, join_step, select_step, table_step, InferredColumn};
use crate::table::TableSnapshot;
use crate::types::{BaseType, ColumnType, Value};

struct Frame {
    cols: Vec<InferredColumn>,
    data: Vec<Vec<Value>>,
    rows: usize,
}

impl Frame {
    fn index(&self, name: &str) -> usize {
        // inference already resolved every name
        self.cols.iter().position(|c| c.name == name).expect("inferred column")
    }
}

/// Evaluates `t` over `inputs`. The result is named `output` and carries
/// the inferred column types with fresh origins.
pub fn evaluate(t: &Transform, inputs: &BTreeMap<String, TableSnapshot>) -> Result<TableSnapshot> {
    let schemas: BTreeMap<String, SchemaContract> =
        inputs.iter().map(|(k, v)| (k.clone(), v.schema().clone())).collect();
    let frame = eval(t, inputs, &schemas)?;
    let schema = SchemaContract::new(
        "output",
        frame
            .cols
            .iter()
            .map(|c| ColumnContract::new(c.name.clone(), c.ty))
            .collect(),
    )?;
    TableSnapshot::new(schema, frame.data)
}

fn eval(
    t: &Transform,
    inputs: &BTreeMap<String, TableSnapshot>,
    schemas: &BTreeMap<String, SchemaContract>,
) -> Result<Frame> {
    match t {
        Transform::Table(n) => {
            let cols = table_step(n, schemas)?;
            let snap = &inputs[n];
            let report = validate_data(snap, snap.schema());
            if !report.is_conformant() {
                return Err(Error::InputContractViolation(format!("{n}: {}", report.summary())));
            }
            Ok(Frame {
                cols,
                data: snap.columns().to_vec(),
                rows: snap.row_count(),
            })
        }
        Transform::Select { input, items } => {
            let f = eval(input, inputs, schemas)?;
            let cols = select_step(&f.cols, items)?;
            let mut data = Vec::with_capacity(items.len());
            for (item, col) in items.iter().zip(&cols) {
                let e = item.unaliased();
                let mut out = Vec::with_capacity(f.rows);
                for r in 0..f.rows {
                    out.push(eval_expr(e, &f, r, &col.name)?);
                }
                data.push(out);
            }
            Ok(Frame {
                cols,
                data,
                rows: f.rows,
            })
        }
        Transform::Filter { input, predicate } => {
            let f = eval(input, inputs, schemas)?;
            let cols = filter_step(&f.cols, predicate)?;
            let mut keep = Vec::new();
            for r in 0..f.rows {
                if eval_expr(predicate, &f, r, "where")? == Value::Bool(true) {
                    keep.push(r);
                }
            }
            let data = f
                .data
                .iter()
                .map(|c| keep.iter().map(|&r| c[r].clone()).collect())
                .collect();
            Ok(Frame {
                cols,
                data,
                rows: keep.len(),
            })
        }
        Transform::Join { left, right, on } => {
            let l = eval(left, inputs, schemas)?;
            let r = eval(right, inputs, schemas)?;
            let cols = join_step(&l.cols, &r.cols, on)?;
            let lk: Vec<usize> = on.iter().map(|k| l.index(k)).collect();
            let rk: Vec<usize> = on.iter().map(|k| r.index(k)).collect();
            let mut table: HashMap<Vec<KeyPart>, Vec<usize>> = HashMap::new();
            for row in 0..r.rows {
                if let Some(key) = key_of(&r, &rk, row) {
                    table.entry(key).or_default().push(row);
                }
            }
            let r_rest: Vec<usize> = (0..r.cols.len()).filter(|i| !rk.contains(i)).collect();
            let mut data: Vec<Vec<Value>> = vec![Vec::new(); l.cols.len() + r_rest.len()];
            let mut rows = 0;
            for lr in 0..l.rows {
                let Some(key) = key_of(&l, &lk, lr) else { continue };
                let Some(matches) = table.get(&key) else { continue };
                for &rr in matches {
                    for (i, c) in l.data.iter().enumerate() {
                        data[i].push(c[lr].clone());
                    }
                    for (j, &ri) in r_rest.iter().enumerate() {
                        data[l.cols.len() + j].push(r.data[ri][rr].clone());
                    }
                    rows += 1;
                }
            }
            Ok(Frame { cols, data, rows })
        }
        Transform::Aggregate { input, group_by, aggs } => {
            let f = eval(input, inputs, schemas)?;
            let cols = aggregate_step(&f.cols, group_by, aggs)?;
            let gk: Vec<usize> = group_by.iter().map(|g| f.index(g)).collect();
            let mut groups: HashMap<Vec<KeyPart>, usize> = HashMap::new();
            let mut firsts: Vec<usize> = Vec::new();
            let mut members: Vec<Vec<usize>> = Vec::new();
            for row in 0..f.rows {
                let key: Vec<KeyPart> = gk.iter().map(|&i| KeyPart::of(&f.data[i][row])).collect();
                let g = *groups.entry(key).or_insert_with(|| {
                    firsts.push(row);
                    members.push(Vec::new());
                    firsts.len() - 1
                });
                members[g].push(row);
            }
            if group_by.is_empty() && f.rows == 0 {
                firsts.push(usize::MAX);
                members.push(Vec::new());
            }
            let mut order: Vec<usize> = (0..firsts.len()).collect();
            order.sort_by(|&a, &b| {
                gk.iter()
                    .map(|&i| f.data[i][firsts[a]].total_cmp(&f.data[i][firsts[b]]))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            });
            let mut data: Vec<Vec<Value>> = vec![Vec::with_capacity(order.len()); cols.len()];
            for &g in &order {
                for (j, &i) in gk.iter().enumerate() {
                    data[j].push(f.data[i][firsts[g]].clone());
                }
                for (j, agg) in aggs.iter().enumerate() {
                    let out = &cols[gk.len() + j];
                    let Expr::Sum(inner) = agg.unaliased() else {
                        unreachable!("checked by inference")
                    };
                    data[gk.len() + j].push(sum(inner, &f, &members[g], out)?);
                }
            }
            Ok(Frame {
                cols,
                data,
                rows: order.len(),
            })
        }
    }
}

fn sum(inner: &Expr, f: &Frame, rows: &[usize], out: &InferredColumn) -> Result<Value> {
    let mut acc: Option<Value> = None;
    for &r in rows {
        let v = eval_expr(inner, f, r, &out.name)?;
        acc = match (acc, v) {
            (acc, Value::Null) => acc,
            (None, v) => Some(v),
            (Some(Value::Int(a)), Value::Int(b)) => Some(Value::Int(a.checked_add(b).ok_or_else(|| {
                Error::ArithmeticOverflow {
                    column: out.name.clone(),
                    row: r,
                }
            })?)),
            (Some(Value::Float(a)), Value::Float(b)) => Some(Value::Float(a + b)),
            (Some(a), b) => unreachable!("sum of {a:?} and {b:?} passed inference"),
        };
    }
    Ok(match acc {
        Some(v) => v,
        None if out.ty.nullable => Value::Null,
        None => match out.ty.base {
            BaseType::Int64 => Value::Int(0),
            _ => Value::Float(0.0),
        },
    })
}

/// Hashable form of a key value. Floats compare by bit pattern after
/// folding `-0.0` into `0.0` and all NaNs into one.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum KeyPart {
    Null,
    Bool(bool),
    Int(i64),
    Float(u64),
    Str(String),
    Timestamp(i64),
}

impl KeyPart {
    fn of(v: &Value) -> KeyPart {
        match v {
            Value::Null => KeyPart::Null,
            Value::Bool(b) => KeyPart::Bool(*b),
            Value::Int(i) => KeyPart::Int(*i),
            Value::Float(x) if x.is_nan() => KeyPart::Float(f64::NAN.to_bits()),
            Value::Float(x) => KeyPart::Float((x + 0.0).to_bits()),
            Value::Str(s) => KeyPart::Str(s.clone()),
            Value::Timestamp(t) => KeyPart::Timestamp(*t),
        }
    }
}

/// Join key of a row; `None` when any part is null, since nulls never match.
fn key_of(f: &Frame, idx: &[usize], row: usize) -> Option<Vec<KeyPart>> {
    idx.iter()
        .map(|&i| match &f.data[i][row] {
            Value::Null => None,
            v => Some(KeyPart::of(v)),
        })
        .collect()
}

fn as_f64(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Float(x) => *x,
        _ => unreachable!("numeric operand"),
    }
}

fn eval_expr(e: &Expr, f: &Frame, row: usize, column: &str) -> Result<Value> {
    Ok(match e {
        Expr::Col(n) => f.data[f.index(n)][row].clone(),
        Expr::Lit(v, _) => v.clone(),
        Expr::Alias(inner, _) => eval_expr(inner, f, row, column)?,
        Expr::Cast(inner, ty) => cast(eval_expr(inner, f, row, column)?, *ty, column, row)?,
        Expr::IsNotNull(inner) => Value::Bool(!eval_expr(inner, f, row, column)?.is_null()),
        Expr::Sub(a, b) => {
            let (x, y) = (eval_expr(a, f, row, column)?, eval_expr(b, f, row, column)?);
            match (&x, &y) {
                (Value::Null, _) | (_, Value::Null) => Value::Null,
                (Value::Int(p), Value::Int(q)) => {
                    Value::Int(p.checked_sub(*q).ok_or_else(|| Error::ArithmeticOverflow {
                        column: column.to_string(),
                        row,
                    })?)
                }
                _ => Value::Float(as_f64(&x) - as_f64(&y)),
            }
        }
        Expr::Lt(a, b) => {
            let (x, y) = (eval_expr(a, f, row, column)?, eval_expr(b, f, row, column)?);
            match (&x, &y) {
                (Value::Null, _) | (_, Value::Null) => Value::Null,
                (Value::Int(p), Value::Int(q)) => Value::Bool(p < q),
                (Value::Int(_) | Value::Float(_), Value::Int(_) | Value::Float(_)) => {
                    Value::Bool(as_f64(&x) < as_f64(&y))
                }
                _ => Value::Bool(x.total_cmp(&y) == Ordering::Less),
            }
        }
        Expr::And(a, b) => {
            let x = eval_expr(a, f, row, column)?;
            if x == Value::Bool(false) {
                return Ok(x);
            }
            let y = eval_expr(b, f, row, column)?;
            match (x, y) {
                (_, Value::Bool(false)) => Value::Bool(false),
                (Value::Null, _) | (_, Value::Null) => Value::Null,
                _ => Value::Bool(true),
            }
        }
        Expr::Sum(_) => unreachable!("sum outside an aggregate passed inference"),
    })
}

/// Applies an explicit cast. Float to int truncates toward zero.
pub(crate) fn cast(v: Value, ty: ColumnType, column: &str, row: usize) -> Result<Value> {
    let failed = |message: String| Error::CastFailed {
        column: column.to_string(),
        row,
        message,
    };
    Ok(match (v, ty.base) {
        (Value::Null, _) if ty.nullable => Value::Null,
        (Value::Null, _) => {
            return Err(Error::RuntimeCastNull {
                column: column.to_string(),
                row,
            })
        }
        (Value::Int(i), BaseType::Float64) => Value::Float(i as f64),
        (Value::Float(x), BaseType::Int64) => {
            let t = x.trunc();
            // i64 covers [-2^63, 2^63)
            if x.is_nan() || !(-9_223_372_036_854_775_808.0..9_223_372_036_854_775_808.0).contains(&t) {
                return Err(failed(format!("{x:?} does not fit in int64")));
            }
            Value::Int(t as i64)
        }
        (Value::Str(s), BaseType::Timestamp) => Value::Timestamp(crate::types::parse_timestamp(&s).map_err(failed)?),
        (v, b) if v.base_type() == Some(b) => v,
        (v, b) => return Err(failed(format!("cannot cast {} to {b}", v.render()))),
    })
}
