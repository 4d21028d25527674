//! Pipeline manifests: schema declarations, expected source tables and
//! transformation nodes introduced by `-- node: Schema <- inputs` headers.
//!
//! ```text
//! source raw_table: RawSchema
//! schema RawSchema { col1: string, col2: timestamp, col3: int64 }
//! schema ParentSchema {
//!     col1: string
//!     col2: timestamp from RawSchema.col2
//!     _S: int64
//! }
//! -- parent_table: ParentSchema <- raw_table
//! select col1, col2, sum(col3) as _S from raw_table group by col1, col2
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::contracts::{ColumnContract, ColumnOrigin, ColumnPath, SchemaContract, Span};
use crate::error::{Error, Result};
use crate::lang::{parse_transform, Transform};
use crate::types::{BaseType, ColumnType, Conversion};

/// One transformation node of a plan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeContract {
    /// Name of the table the node produces.
    pub name: String,
    pub inputs: Vec<String>,
    pub declared_output: SchemaContract,
    #[serde(skip)]
    pub transform: Transform,
    /// Header and body exactly as written in the manifest.
    pub source_text: String,
    pub span: Span,
}

/// Declaration site of each `(schema, column)`.
pub(crate) type ColumnSpans = HashMap<(String, String), Span>;

/// A validated pipeline: nodes in dependency order plus the source tables
/// it expects in the lake.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelinePlan {
    pub nodes: Vec<NodeContract>,
    pub sources: BTreeMap<String, SchemaContract>,
    pub schemas: BTreeMap<String, SchemaContract>,
    #[serde(skip)]
    pub(crate) column_spans: ColumnSpans,
}

impl PipelinePlan {
    pub fn node(&self, name: &str) -> Option<&NodeContract> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn node_names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub(crate) fn column_span(&self, schema: &str, column: &str) -> Option<Span> {
        self.column_spans
            .get(&(schema.to_string(), column.to_string()))
            .cloned()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<PipelinePlan> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    parse_manifest(&text, &path.display().to_string())
}

fn perr(line: usize, col: usize, message: impl Into<String>) -> Error {
    Error::ManifestParse {
        line,
        col,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum DTok {
    Word(String),
    Sym(char),
    Arrow,
    Newline,
}

#[derive(Debug, Clone)]
struct Located {
    tok: DTok,
    line: usize,
    col: usize,
}

/// Tokenizes declaration text starting at (`line`, `col`).
fn scan(text: &str, line: usize, col: usize) -> Result<Vec<Located>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (line, col);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (l, k) = (line, col);
        if c == '\n' {
            out.push(Located {
                tok: DTok::Newline,
                line: l,
                col: k,
            });
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '<' && chars.get(i + 1) == Some(&'-') {
            out.push(Located {
                tok: DTok::Arrow,
                line: l,
                col: k,
            });
            i += 2;
            col += 2;
            continue;
        }
        if "{}:,.?".contains(c) {
            out.push(Located {
                tok: DTok::Sym(c),
                line: l,
                col: k,
            });
            i += 1;
            col += 1;
            continue;
        }
        if c == '"' {
            let mut word = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None | Some('\n') => return Err(perr(l, k, "unterminated quoted name")),
                    Some('"') if chars.get(j + 1) == Some(&'"') => {
                        word.push('"');
                        j += 2;
                    }
                    Some('"') => {
                        j += 1;
                        break;
                    }
                    Some(ch) => {
                        word.push(*ch);
                        j += 1;
                    }
                }
            }
            col += j - i;
            i = j;
            out.push(Located {
                tok: DTok::Word(word),
                line: l,
                col: k,
            });
            continue;
        }
        if c.is_ascii_alphanumeric() || c == '_' || c == '/' || c == '-' {
            let mut word = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '/') {
                word.push(chars[i]);
                i += 1;
                col += 1;
            }
            if word.is_empty() {
                return Err(perr(l, k, format!("unexpected `{c}`")));
            }
            out.push(Located {
                tok: DTok::Word(word),
                line: l,
                col: k,
            });
            continue;
        }
        return Err(perr(l, k, format!("unexpected `{c}`")));
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<Located>,
    pos: usize,
    end: (usize, usize),
}

impl Cursor {
    fn new(toks: Vec<Located>, end: (usize, usize)) -> Cursor {
        Cursor { toks, pos: 0, end }
    }

    fn peek(&self) -> Option<&DTok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map(|t| (t.line, t.col)).unwrap_or(self.end)
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        let (l, c) = self.here();
        perr(l, c, message)
    }

    fn skip_newlines(&mut self) {
        while self.peek() == Some(&DTok::Newline) {
            self.pos += 1;
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, usize, usize)> {
        let (l, c) = self.here();
        match self.peek() {
            Some(DTok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok((w, l, c))
            }
            _ => Err(self.fail(format!("expected {what}"))),
        }
    }

    fn sym(&mut self, s: char) -> Result<()> {
        if self.peek() == Some(&DTok::Sym(s)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.fail(format!("expected `{s}`")))
        }
    }

    fn eat_sym(&mut self, s: char) -> bool {
        if self.peek() == Some(&DTok::Sym(s)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek(), Some(DTok::Word(x)) if x == w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn done(&mut self) -> Result<()> {
        self.skip_newlines();
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.fail("unexpected trailing text")),
        }
    }
}

struct RawColumn {
    name: String,
    ty: ColumnType,
    from: Option<(ColumnPath, usize, usize)>,
    notnull: bool,
    line: usize,
    col: usize,
}

struct RawSchema {
    name: String,
    columns: Vec<RawColumn>,
    line: usize,
    col: usize,
}

fn parse_schema_decl(text: &str, line: usize) -> Result<RawSchema> {
    let toks = scan(text, line, 1)?;
    let mut c = Cursor::new(toks, (line + text.lines().count().saturating_sub(1), 1));
    let (kw, l0, c0) = c.word("`schema`")?;
    debug_assert_eq!(kw, "schema");
    let (name, _, _) = c.word("a schema name")?;
    c.skip_newlines();
    c.sym('{')?;
    let mut columns = Vec::new();
    loop {
        c.skip_newlines();
        if c.eat_sym('}') {
            break;
        }
        let (col_name, l, k) = c.word("a column name or `}`")?;
        c.sym(':')?;
        let (ty_name, tl, tk) = c.word("a column type")?;
        let base = BaseType::from_name(&ty_name).ok_or_else(|| perr(tl, tk, format!("unknown type `{ty_name}`")))?;
        let mut nullable = c.eat_sym('?');
        nullable |= c.eat_word("nullable");
        let from = if c.eat_word("from") {
            let (s, fl, fk) = c.word("`Schema.column`")?;
            c.sym('.')?;
            let (col, _, _) = c.word("a column name")?;
            Some((ColumnPath::new(s, col), fl, fk))
        } else {
            None
        };
        let notnull = c.eat_word("notnull");
        if notnull && nullable {
            return Err(perr(
                l,
                k,
                format!("column `{col_name}` cannot be both nullable and notnull"),
            ));
        }
        if notnull && from.is_none() {
            return Err(perr(l, k, format!("`notnull` on `{col_name}` needs a `from` source")));
        }
        columns.push(RawColumn {
            name: col_name,
            ty: ColumnType::new(base, nullable),
            from,
            notnull,
            line: l,
            col: k,
        });
        match c.peek() {
            Some(DTok::Sym(',')) | Some(DTok::Newline) => {
                c.pos += 1;
            }
            Some(DTok::Sym('}')) => {}
            _ => return Err(c.fail("expected `,`, a newline or `}` after a column")),
        }
    }
    c.done()?;
    Ok(RawSchema {
        name,
        columns,
        line: l0,
        col: c0,
    })
}

/// `-- name: Schema <- in1, in2` with the leading `--` already removed.
/// Returns `None` when the comment is not a node header.
fn parse_header(rest: &str, line: usize, col: usize) -> Option<(String, String, Vec<String>)> {
    let toks = scan(rest, line, col).ok()?;
    let mut c = Cursor::new(toks, (line, col));
    let (node, _, _) = c.word("").ok()?;
    c.sym(':').ok()?;
    let (schema, _, _) = c.word("").ok()?;
    if c.peek() != Some(&DTok::Arrow) {
        return None;
    }
    c.pos += 1;
    let mut inputs = vec![c.word("").ok()?.0];
    while c.eat_sym(',') {
        inputs.push(c.word("").ok()?.0);
    }
    c.done().ok()?;
    Some((node, schema, inputs))
}

fn is_declaration(line: &str) -> bool {
    let t = line.trim_start();
    let first = t.split_whitespace().next().unwrap_or("");
    (first == "schema" && t.contains('{')) || (first == "source" && t.contains(':'))
}

fn header_of(line: &str, number: usize) -> Option<(String, String, Vec<String>, usize)> {
    let indent = line.len() - line.trim_start().len();
    let rest = line.trim_start().strip_prefix("--")?;
    let col = indent + 3;
    parse_header(rest, number, col).map(|(n, s, i)| (n, s, i, indent + 1))
}

struct RawNode {
    name: String,
    schema: String,
    inputs: Vec<String>,
    body: String,
    body_line: usize,
    source_text: String,
    span: Span,
}

/// Parses manifest text. `file` is only used in spans.
pub fn parse_manifest(text: &str, file: &str) -> Result<PipelinePlan> {
    let lines: Vec<&str> = text.lines().collect();
    let mut schemas: Vec<RawSchema> = Vec::new();
    let mut sources: Vec<(String, String, usize, usize)> = Vec::new();
    let mut nodes: Vec<RawNode> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let number = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            i += 1;
            continue;
        }
        if let Some((name, schema, inputs, col)) = header_of(line, number) {
            let mut j = i + 1;
            while j < lines.len() && header_of(lines[j], j + 1).is_none() && !is_declaration(lines[j]) {
                j += 1;
            }
            let mut end = j;
            while end > i + 1 && lines[end - 1].trim().is_empty() {
                end -= 1;
            }
            nodes.push(RawNode {
                name,
                schema,
                inputs,
                body: lines[i + 1..end].join("\n"),
                body_line: i + 2,
                source_text: lines[i..end].join("\n"),
                span: Span {
                    file: file.to_string(),
                    line: number,
                    col,
                },
            });
            i = j;
            continue;
        }
        if trimmed.starts_with("--") {
            i += 1;
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or("");
        match first {
            "schema" => {
                let mut depth = 0i32;
                let mut j = i;
                let mut closed = false;
                while j < lines.len() {
                    for ch in lines[j].split("--").next().unwrap_or("").chars() {
                        match ch {
                            '{' => depth += 1,
                            '}' => depth -= 1,
                            _ => {}
                        }
                    }
                    j += 1;
                    if depth <= 0 && lines[j - 1].contains('}') {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(perr(number, 1, "schema block is missing its closing `}`"));
                }
                schemas.push(parse_schema_decl(&lines[i..j].join("\n"), number)?);
                i = j;
            }
            "source" => {
                let toks = scan(line, number, 1)?;
                let mut c = Cursor::new(toks, (number, line.len() + 1));
                c.word("`source`")?;
                let (table, l, k) = c.word("a table name")?;
                c.sym(':')?;
                let (schema, _, _) = c.word("a schema name")?;
                c.done()?;
                sources.push((table, schema, l, k));
                i += 1;
            }
            _ => {
                return Err(perr(
                    number,
                    line.len() - line.trim_start().len() + 1,
                    "expected `schema`, `source` or a `-- node: Schema <- inputs` header",
                ))
            }
        }
    }
    build_plan(schemas, sources, nodes, file)
}

fn resolve_schemas(raw: Vec<RawSchema>, file: &str) -> Result<(BTreeMap<String, SchemaContract>, ColumnSpans)> {
    let mut by_name: HashMap<String, &RawSchema> = HashMap::new();
    for s in &raw {
        if by_name.insert(s.name.clone(), s).is_some() {
            return Err(perr(s.line, s.col, format!("schema `{}` declared twice", s.name)));
        }
    }
    let mut out = BTreeMap::new();
    let mut spans = HashMap::new();
    for s in &raw {
        let mut cols = Vec::new();
        for c in &s.columns {
            let origin = match &c.from {
                None => ColumnOrigin::Fresh,
                Some((path, l, k)) => {
                    let upstream = by_name
                        .get(&path.schema)
                        .ok_or_else(|| Error::UnknownSchema(path.schema.clone()))?;
                    let up = upstream.columns.iter().find(|u| u.name == path.column).ok_or_else(|| {
                        perr(
                            *l,
                            *k,
                            format!("schema `{}` has no column `{}`", path.schema, path.column),
                        )
                    })?;
                    if c.notnull {
                        if up.ty.base != c.ty.base {
                            return Err(perr(
                                *l,
                                *k,
                                format!(
                                    "`{}` is {} but {} is {}; notnull keeps the base type",
                                    c.name, c.ty, path, up.ty
                                ),
                            ));
                        }
                        ColumnOrigin::InheritedNotNull(path.clone())
                    } else {
                        match up.ty.conversion_to(c.ty) {
                            Conversion::Same | Conversion::Widening => ColumnOrigin::Inherited(path.clone()),
                            Conversion::Narrowing => ColumnOrigin::InheritedNarrowed(path.clone()),
                            Conversion::Illegal => {
                                return Err(perr(
                                    *l,
                                    *k,
                                    format!("`{}: {}` cannot be derived from {} ({})", c.name, c.ty, path, up.ty),
                                ))
                            }
                        }
                    }
                }
            };
            spans.insert(
                (s.name.clone(), c.name.clone()),
                Span {
                    file: file.to_string(),
                    line: c.line,
                    col: c.col,
                },
            );
            cols.push(ColumnContract::new(c.name.clone(), c.ty).with_origin(origin));
        }
        let contract = SchemaContract::new(s.name.clone(), cols).map_err(|e| perr(s.line, s.col, e.to_string()))?;
        out.insert(s.name.clone(), contract);
    }
    Ok((out, spans))
}

fn build_plan(
    raw_schemas: Vec<RawSchema>,
    raw_sources: Vec<(String, String, usize, usize)>,
    raw_nodes: Vec<RawNode>,
    file: &str,
) -> Result<PipelinePlan> {
    let (schemas, column_spans) = resolve_schemas(raw_schemas, file)?;
    let lookup = |name: &str| {
        schemas
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownSchema(name.to_string()))
    };
    let mut sources = BTreeMap::new();
    for (table, schema, l, k) in raw_sources {
        if sources.insert(table.clone(), lookup(&schema)?).is_some() {
            return Err(perr(l, k, format!("source `{table}` declared twice")));
        }
    }
    if raw_nodes.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let mut names = HashSet::new();
    for n in &raw_nodes {
        if sources.contains_key(&n.name) {
            return Err(perr(
                n.span.line,
                n.span.col,
                format!("node `{}` shadows a source table", n.name),
            ));
        }
        if !names.insert(n.name.clone()) {
            return Err(perr(
                n.span.line,
                n.span.col,
                format!("node `{}` declared twice", n.name),
            ));
        }
    }
    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for n in raw_nodes {
        let declared_output = lookup(&n.schema)?;
        let mut seen = HashSet::new();
        for input in &n.inputs {
            if !sources.contains_key(input) && !names.contains(input) {
                return Err(perr(
                    n.span.line,
                    n.span.col,
                    format!(
                        "node `{}` reads `{input}`, which is neither a source nor a node",
                        n.name
                    ),
                ));
            }
            if !seen.insert(input.clone()) {
                return Err(perr(n.span.line, n.span.col, format!("input `{input}` listed twice")));
            }
        }
        let transform = parse_transform(&n.body).map_err(|e| match e {
            Error::Syntax {
                line,
                col,
                expected,
                found,
            } => perr(
                n.body_line + line - 1,
                col,
                format!("expected {expected}, found {found}"),
            ),
            other => other,
        })?;
        let mut referenced = transform.referenced_tables();
        referenced.sort();
        let mut declared = n.inputs.clone();
        declared.sort();
        if referenced != declared {
            return Err(perr(
                n.span.line,
                n.span.col,
                format!(
                    "node `{}` declares inputs [{}] but its transform reads [{}]",
                    n.name,
                    declared.join(", "),
                    referenced.join(", ")
                ),
            ));
        }
        nodes.push(NodeContract {
            name: n.name,
            inputs: n.inputs,
            declared_output,
            transform,
            source_text: n.source_text,
            span: n.span,
        });
    }
    Ok(PipelinePlan {
        nodes: topo_sort(nodes)?,
        sources,
        schemas,
        column_spans,
    })
}

/// Kahn's algorithm, always taking the earliest-declared ready node.
fn topo_sort(nodes: Vec<NodeContract>) -> Result<Vec<NodeContract>> {
    let names: HashSet<String> = nodes.iter().map(|n| n.name.clone()).collect();
    let mut placed: HashSet<String> = HashSet::new();
    let mut remaining: Vec<Option<NodeContract>> = nodes.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(remaining.len());
    while out.len() < remaining.len() {
        let ready = remaining.iter().position(|slot| {
            slot.as_ref()
                .is_some_and(|n| n.inputs.iter().all(|i| !names.contains(i) || placed.contains(i)))
        });
        match ready {
            Some(idx) => {
                let n = remaining[idx].take().unwrap();
                placed.insert(n.name.clone());
                out.push(n);
            }
            None => {
                let left: Vec<&NodeContract> = remaining.iter().flatten().collect();
                return Err(Error::CycleDetected(find_cycle(&left)));
            }
        }
    }
    Ok(out)
}

fn find_cycle(nodes: &[&NodeContract]) -> Vec<String> {
    let by_name: HashMap<&str, &NodeContract> = nodes.iter().map(|n| (n.name.as_str(), *n)).collect();
    // every remaining node has an unplaced dependency, so walking any
    // such edge must revisit a node
    let mut path: Vec<&str> = vec![nodes[0].name.as_str()];
    loop {
        let cur = by_name[path.last().unwrap()];
        let next = cur
            .inputs
            .iter()
            .find(|i| by_name.contains_key(i.as_str()))
            .expect("unplaced node has an unplaced input");
        if let Some(start) = path.iter().position(|p| *p == next) {
            let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
            cycle.reverse();
            cycle.insert(0, next.clone());
            return cycle;
        }
        path.push(next);
    }
}
