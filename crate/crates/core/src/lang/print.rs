//! Renders ASTs back into source text that parses to the same AST.

use std::fmt::{self, Write};

use crate::lang::ast::{default_literal_type, Expr, Transform};
use crate::lang::lexer::{is_numeric_word, Keyword};
use crate::types::{format_timestamp, Value};

/// Identifier text, quoted when it would not lex back as an identifier.
pub fn ident(name: &str) -> String {
    let plain = !name.is_empty()
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && !is_numeric_word(name)
        && Keyword::lookup(name).is_none();
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn ident_list(names: &[String]) -> String {
    names.iter().map(|n| ident(n)).collect::<Vec<_>>().join(", ")
}

/// Binding strength: and < comparison < subtraction < atom.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::And(..) => 0,
        Expr::Lt(..) | Expr::IsNotNull(_) => 1,
        Expr::Sub(..) => 2,
        Expr::Alias(..) => 0,
        _ => 3,
    }
}

fn write_literal(f: &mut impl Write, v: &Value) -> fmt::Result {
    match v {
        Value::Null => f.write_str("null"),
        Value::Bool(b) => write!(f, "{b}"),
        Value::Int(i) => write!(f, "{i}"),
        Value::Float(x) => write!(f, "{x:?}"),
        Value::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
        Value::Timestamp(t) => write!(f, "timestamp '{}'", format_timestamp(*t)),
    }
}

fn write_expr(f: &mut impl Write, e: &Expr, min: u8) -> fmt::Result {
    let paren = level(e) < min;
    if paren {
        f.write_char('(')?;
    }
    match e {
        Expr::Col(n) => f.write_str(&ident(n))?,
        Expr::Lit(v, ty) => {
            write_literal(f, v)?;
            if v.is_null() || *ty != default_literal_type(v) {
                write!(f, "::{ty}")?;
            }
        }
        Expr::Cast(inner, ty) => {
            f.write_str("cast(")?;
            write_expr(f, inner, 0)?;
            write!(f, " as {ty})")?;
        }
        Expr::Alias(inner, n) => {
            write_expr(f, inner, 0)?;
            write!(f, " as {}", ident(n))?;
        }
        Expr::IsNotNull(inner) => {
            write_expr(f, inner, 1)?;
            f.write_str(" is not null")?;
        }
        Expr::Sub(a, b) => {
            write_expr(f, a, 2)?;
            f.write_str(" - ")?;
            write_expr(f, b, 3)?;
        }
        Expr::Lt(a, b) => {
            write_expr(f, a, 1)?;
            f.write_str(" < ")?;
            write_expr(f, b, 2)?;
        }
        Expr::And(a, b) => {
            write_expr(f, a, 0)?;
            f.write_str(" and ")?;
            write_expr(f, b, 1)?;
        }
        Expr::Sum(inner) => {
            f.write_str("sum(")?;
            write_expr(f, inner, 0)?;
            f.write_char(')')?;
        }
    }
    if paren {
        f.write_char(')')?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 0)
    }
}

fn from_item(t: &Transform) -> String {
    match t {
        Transform::Table(n) => ident(n),
        other => format!("({other})"),
    }
}

fn source(t: &Transform) -> String {
    match t {
        Transform::Join { left, right, on } => {
            format!("{} join {} on {}", source(left), from_item(right), ident_list(on))
        }
        other => from_item(other),
    }
}

/// `from <source> [where <pred>]`, folding one filter into the where clause.
fn from_clause(t: &Transform) -> String {
    match t {
        Transform::Filter { input, predicate } => {
            format!("from {} where {predicate}", source(input))
        }
        other => format!("from {}", source(other)),
    }
}

fn item_list(items: &[Expr]) -> String {
    items.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Table(_) | Transform::Join { .. } | Transform::Filter { .. } => {
                write!(f, "select * {}", from_clause(self))
            }
            Transform::Select { input, items } => {
                write!(f, "select {} {}", item_list(items), from_clause(input))
            }
            Transform::Aggregate { input, group_by, aggs } => {
                let mut items: Vec<String> = group_by.iter().map(|g| ident(g)).collect();
                items.extend(aggs.iter().map(|a| a.to_string()));
                write!(f, "select {} {}", items.join(", "), from_clause(input))?;
                if !group_by.is_empty() {
                    write!(f, " group by {}", ident_list(group_by))?;
                }
                Ok(())
            }
        }
    }
}
