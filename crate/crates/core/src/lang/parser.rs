//! Recursive-descent parser.
//!
//! ```text
//! query       := SELECT ( '*' | item (',' item)* ) FROM source
//!                [ WHERE expr ] [ GROUP BY ident (',' ident)* ]
//! item        := expr [ AS ident ]
//! source      := source_item ( JOIN source_item ON ident (',' ident)* )*
//! source_item := ident | '(' query ')'
//! expr        := cmp ( AND cmp )*
//! cmp         := sub ( '<' sub | IS NOT NULL )*
//! sub         := atom ( '-' atom )*
//! atom        := ident | literal [ '::' type ] | CAST '(' expr AS type ')'
//!              | SUM '(' expr ')' | '(' expr ')'
//! literal     := ['-'] number | 'text' | TRUE | FALSE | NULL | TIMESTAMP 'text'
//! type        := base [ '?' ]
//! ```
//!
//! A query is an aggregate when it has GROUP BY or a top-level `sum(..)`
//! item; its items must then be the group-by columns, in order, followed
//! by `sum(..)` items.

use crate::error::{Error, Result};
use crate::lang::ast::{default_literal_type, Expr, Transform};
use crate::lang::lexer::{tokenize, Keyword, Tok, Token};
use crate::types::{parse_timestamp, BaseType, ColumnType, Value};

pub fn parse_transform(src: &str) -> Result<Transform> {
    let mut p = Parser::new(src)?;
    let t = p.query()?;
    p.expect_eof()?;
    Ok(t)
}

pub fn parse_expr(src: &str) -> Result<Expr> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

pub fn parse_type(src: &str) -> Result<ColumnType> {
    let mut p = Parser::new(src)?;
    let t = p.ty()?;
    p.expect_eof()?;
    Ok(t)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Parser> {
        Ok(Parser {
            toks: tokenize(src)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, pos: usize, expected: &str) -> Error {
        let t = &self.toks[pos];
        Error::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.to_string(),
            found: t.tok.to_string(),
        }
    }

    fn error(&self, expected: &str) -> Error {
        self.error_at(self.pos, expected)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: Keyword) -> bool {
        self.eat(&Tok::Kw(k))
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<()> {
        if self.eat(&tok) {
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn expect_kw(&mut self, k: Keyword) -> Result<()> {
        let what = format!("`{}`", k.as_str());
        self.expect(Tok::Kw(k), &what)
    }

    fn expect_eof(&mut self) -> Result<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error("end of input"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error("an identifier")),
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>> {
        let mut out = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn query(&mut self) -> Result<Transform> {
        let start = self.pos;
        self.expect_kw(Keyword::Select)?;
        let items = if self.eat(&Tok::Star) {
            None
        } else {
            let mut items = vec![self.item()?];
            while self.eat(&Tok::Comma) {
                items.push(self.item()?);
            }
            Some(items)
        };
        self.expect_kw(Keyword::From)?;
        let mut source = self.source()?;
        if self.eat_kw(Keyword::Where) {
            source = source.filter(self.expr()?);
        }
        let group_by = if self.eat_kw(Keyword::Group) {
            self.expect_kw(Keyword::By)?;
            Some(self.ident_list()?)
        } else {
            None
        };
        let Some(items) = items else {
            if group_by.is_some() {
                return Err(self.error_at(start + 1, "a projection list with `group by`"));
            }
            return Ok(source);
        };
        let is_sum = |e: &Expr| matches!(e.unaliased(), Expr::Sum(_));
        if group_by.is_none() && !items.iter().any(is_sum) {
            return Ok(Transform::Select {
                input: Box::new(source),
                items,
            });
        }
        let group_by = group_by.unwrap_or_default();
        let shape_ok = items.len() >= group_by.len()
            && group_by
                .iter()
                .zip(&items)
                .all(|(g, e)| matches!(e, Expr::Col(c) if c == g))
            && items[group_by.len()..].iter().all(is_sum);
        if !shape_ok {
            return Err(self.error_at(start + 1, "the group-by columns in order, followed by sum(..) items"));
        }
        let aggs = items[group_by.len()..].to_vec();
        Ok(Transform::Aggregate {
            input: Box::new(source),
            group_by,
            aggs,
        })
    }

    fn item(&mut self) -> Result<Expr> {
        let e = self.expr()?;
        if self.eat_kw(Keyword::As) {
            Ok(Expr::Alias(Box::new(e), self.ident()?))
        } else {
            Ok(e)
        }
    }

    fn source(&mut self) -> Result<Transform> {
        let mut left = self.source_item()?;
        while self.eat_kw(Keyword::Join) {
            let right = self.source_item()?;
            self.expect_kw(Keyword::On)?;
            let on = self.ident_list()?;
            left = Transform::Join {
                left: Box::new(left),
                right: Box::new(right),
                on,
            };
        }
        Ok(left)
    }

    fn source_item(&mut self) -> Result<Transform> {
        match self.peek() {
            Tok::Ident(_) => Ok(Transform::Table(self.ident()?)),
            Tok::LParen => {
                self.bump();
                let q = self.query()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(q)
            }
            _ => Err(self.error("a table name or `(`")),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut l = self.cmp()?;
        while self.eat_kw(Keyword::And) {
            l = l.and(self.cmp()?);
        }
        Ok(l)
    }

    fn cmp(&mut self) -> Result<Expr> {
        let mut l = self.sub()?;
        loop {
            if self.eat(&Tok::Lt) {
                l = l.lt(self.sub()?);
            } else if self.eat_kw(Keyword::Is) {
                self.expect_kw(Keyword::Not)?;
                self.expect_kw(Keyword::Null)?;
                l = l.is_not_null();
            } else {
                return Ok(l);
            }
        }
    }

    fn sub(&mut self) -> Result<Expr> {
        let mut l = self.atom()?;
        while self.eat(&Tok::Minus) {
            l = l.sub(self.atom()?);
        }
        Ok(l)
    }

    fn ty(&mut self) -> Result<ColumnType> {
        let name = match self.peek().clone() {
            Tok::Ident(s) => s,
            Tok::Kw(Keyword::Timestamp) => "timestamp".to_string(),
            _ => return Err(self.error("a type name")),
        };
        let Some(base) = BaseType::from_name(&name) else {
            return Err(self.error("one of string, int64, float64, timestamp, bool"));
        };
        self.bump();
        let nullable = self.eat(&Tok::Question);
        Ok(ColumnType::new(base, nullable))
    }

    fn number(&mut self, negative: bool) -> Result<Value> {
        let at = self.pos;
        let sign = if negative { "-" } else { "" };
        match self.bump() {
            Tok::Int(text) => format!("{sign}{text}")
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| self.error_at(at, "an integer within int64 range")),
            Tok::Float(text) => match format!("{sign}{text}").parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Value::Float(x)),
                _ => Err(self.error_at(at, "a finite float literal")),
            },
            _ => Err(self.error_at(at, "a number")),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let value = match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                return Ok(Expr::Col(name));
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(e);
            }
            Tok::Kw(Keyword::Cast) => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect_kw(Keyword::As)?;
                let ty = self.ty()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(e.cast(ty));
            }
            Tok::Kw(Keyword::Sum) => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                return Ok(e.sum());
            }
            Tok::Int(_) | Tok::Float(_) => self.number(false)?,
            Tok::Minus if matches!(self.peek_at(1), Tok::Int(_) | Tok::Float(_)) => {
                self.bump();
                self.number(true)?
            }
            Tok::Str(s) => {
                self.bump();
                Value::Str(s)
            }
            Tok::Kw(Keyword::True) => {
                self.bump();
                Value::Bool(true)
            }
            Tok::Kw(Keyword::False) => {
                self.bump();
                Value::Bool(false)
            }
            Tok::Kw(Keyword::Timestamp) => {
                self.bump();
                let at = self.pos;
                match self.bump() {
                    Tok::Str(s) => {
                        Value::Timestamp(parse_timestamp(&s).map_err(|_| self.error_at(at, "an ISO-8601 timestamp"))?)
                    }
                    _ => return Err(self.error_at(at, "a quoted timestamp")),
                }
            }
            Tok::Kw(Keyword::Null) => {
                self.bump();
                self.expect(Tok::ColonColon, "`::` and a type after `null`")?;
                return Ok(Expr::Lit(Value::Null, self.ty()?));
            }
            _ => return Err(self.error("an expression")),
        };
        let ty = if self.eat(&Tok::ColonColon) {
            self.ty()?
        } else {
            default_literal_type(&value)
        };
        Ok(Expr::Lit(value, ty))
    }
}
