use crate::types::{BaseType, ColumnType, Value};

/// Scalar expression. `Alias` is only meaningful at the top of a projection
/// item and `Sum` only as an aggregate item.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Col(String),
    Lit(Value, ColumnType),
    Cast(Box<Expr>, ColumnType),
    Alias(Box<Expr>, String),
    IsNotNull(Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Sum(Box<Expr>),
}

impl Expr {
    pub fn col(name: impl Into<String>) -> Expr {
        Expr::Col(name.into())
    }

    /// Literal with the default type of its value; `Null` defaults to `string?`.
    pub fn lit(v: Value) -> Expr {
        let ty = default_literal_type(&v);
        Expr::Lit(v, ty)
    }

    pub fn cast(self, ty: ColumnType) -> Expr {
        Expr::Cast(Box::new(self), ty)
    }

    pub fn alias(self, name: impl Into<String>) -> Expr {
        Expr::Alias(Box::new(self), name.into())
    }

    pub fn is_not_null(self) -> Expr {
        Expr::IsNotNull(Box::new(self))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(rhs))
    }

    pub fn lt(self, rhs: Expr) -> Expr {
        Expr::Lt(Box::new(self), Box::new(rhs))
    }

    pub fn and(self, rhs: Expr) -> Expr {
        Expr::And(Box::new(self), Box::new(rhs))
    }

    pub fn sum(self) -> Expr {
        Expr::Sum(Box::new(self))
    }

    /// Name a projection item gets without an explicit alias, if any.
    pub fn implicit_name(&self) -> Option<&str> {
        match self {
            Expr::Alias(_, n) => Some(n),
            Expr::Col(n) => Some(n),
            Expr::Cast(inner, _) => match inner.as_ref() {
                Expr::Col(n) => Some(n),
                _ => None,
            },
            _ => None,
        }
    }

    /// The expression under any top-level alias.
    pub fn unaliased(&self) -> &Expr {
        match self {
            Expr::Alias(inner, _) => inner,
            e => e,
        }
    }
}

pub(crate) fn default_literal_type(v: &Value) -> ColumnType {
    match v.base_type() {
        Some(b) => ColumnType::required(b),
        None => ColumnType::nullable(BaseType::String),
    }
}

/// A table-valued transformation over named input tables.
#[derive(Debug, Clone, PartialEq)]
pub enum Transform {
    /// An input table: a source table or the output of another node.
    Table(String),
    Select {
        input: Box<Transform>,
        items: Vec<Expr>,
    },
    Filter {
        input: Box<Transform>,
        predicate: Expr,
    },
    /// Inner equi-join on columns present on both sides.
    Join {
        left: Box<Transform>,
        right: Box<Transform>,
        on: Vec<String>,
    },
    Aggregate {
        input: Box<Transform>,
        group_by: Vec<String>,
        aggs: Vec<Expr>,
    },
}

impl Transform {
    pub fn table(name: impl Into<String>) -> Transform {
        Transform::Table(name.into())
    }

    pub fn select(self, items: Vec<Expr>) -> Transform {
        Transform::Select {
            input: Box::new(self),
            items,
        }
    }

    pub fn filter(self, predicate: Expr) -> Transform {
        Transform::Filter {
            input: Box::new(self),
            predicate,
        }
    }

    pub fn join(self, right: Transform, on: &[&str]) -> Transform {
        Transform::Join {
            left: Box::new(self),
            right: Box::new(right),
            on: on.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn aggregate(self, group_by: &[&str], aggs: Vec<Expr>) -> Transform {
        Transform::Aggregate {
            input: Box::new(self),
            group_by: group_by.iter().map(|s| s.to_string()).collect(),
            aggs,
        }
    }

    /// Input tables referenced anywhere in the transform, deduplicated, in
    /// order of first appearance.
    pub fn referenced_tables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_tables(&mut out);
        out
    }

    fn collect_tables(&self, out: &mut Vec<String>) {
        match self {
            Transform::Table(n) => {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
            Transform::Select { input, .. } | Transform::Filter { input, .. } | Transform::Aggregate { input, .. } => {
                input.collect_tables(out)
            }
            Transform::Join { left, right, .. } => {
                left.collect_tables(out);
                right.collect_tables(out);
            }
        }
    }
}
