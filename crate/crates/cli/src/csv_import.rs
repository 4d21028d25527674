//! CSV ingestion with a typed header line: `name:type[?]` per column, where
//! `?` marks a nullable column. An empty cell is null.

use std::fmt;
use std::path::Path;

use lakekit::contracts::{ColumnContract, SchemaContract};
use lakekit::{ColumnType, TableSnapshot, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CsvError {
    /// `line` is 1-based and counts the header.
    Parse {
        line: usize,
        message: String,
    },
    NullInNonNullable {
        column: String,
        line: usize,
    },
}

impl CsvError {
    pub fn code(&self) -> &'static str {
        match self {
            CsvError::Parse { .. } => "CsvParseError",
            CsvError::NullInNonNullable { .. } => "NullInNonNullable",
        }
    }
}

impl fmt::Display for CsvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsvError::Parse { line, message } => write!(f, "line {line}: {message}"),
            CsvError::NullInNonNullable { column, line } => {
                write!(f, "line {line}: null in non-nullable column `{column}`")
            }
        }
    }
}

impl std::error::Error for CsvError {}

fn parse_err(line: usize, message: impl Into<String>) -> CsvError {
    CsvError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(fields: &csv::StringRecord) -> Result<Vec<ColumnContract>, CsvError> {
    fields
        .iter()
        .map(|field| {
            let (name, ty) = field
                .split_once(':')
                .ok_or_else(|| parse_err(1, format!("header field `{field}` is not `name:type`")))?;
            let ty: ColumnType = ty.parse().map_err(|e: String| parse_err(1, e))?;
            Ok(ColumnContract::new(name.trim(), ty))
        })
        .collect()
}

/// Parses CSV text into a snapshot whose schema is named `schema_name`.
pub fn parse_csv(text: &str, schema_name: &str) -> Result<TableSnapshot, CsvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(parse_err(1, "missing typed header line")),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    let columns = parse_header(&header)?;
    let schema = SchemaContract::new(schema_name, columns.clone()).map_err(|e| parse_err(1, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != columns.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", columns.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(columns.len());
        for (cell, col) in rec.iter().zip(&columns) {
            if cell.is_empty() {
                if !col.ty.nullable {
                    return Err(CsvError::NullInNonNullable {
                        column: col.name.clone(),
                        line,
                    });
                }
                row.push(Value::Null);
            } else {
                let v = Value::parse_as(cell, col.ty.base)
                    .map_err(|e| parse_err(line, format!("column `{}`: {e}", col.name)))?;
                row.push(v);
            }
        }
        rows.push(row);
    }
    TableSnapshot::from_rows(schema, rows).map_err(|e| parse_err(1, e.to_string()))
}

pub fn read_csv(path: &Path, schema_name: &str) -> Result<TableSnapshot, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|e| parse_err(0, format!("{}: {e}", path.display())))?;
    parse_csv(&text, schema_name)
}
