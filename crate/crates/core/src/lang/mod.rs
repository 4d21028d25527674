//! A closed transformation language: projection, aliasing, literals,
//! explicit casts, filters, inner joins and grouped sums.

mod ast;
mod eval;
mod infer;
mod lexer;
mod parser;
mod print;

pub use ast::{Expr, Transform};
pub use eval::evaluate;
pub use infer::{infer_schema, Derivation, DerivationKind, InferredColumn, InferredSchema, SourceColumn};
pub use parser::{parse_expr, parse_transform, parse_type};
pub use print::ident as quote_ident;
