//! In-memory table snapshots.

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::contracts::SchemaContract;
use crate::error::{Error, Result};
use crate::types::Value;

/// An immutable, fully materialised version of one table: a schema plus
/// one value vector per schema column.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSnapshot {
    schema: SchemaContract,
    columns: Vec<Vec<Value>>,
    row_count: usize,
}

impl TableSnapshot {
    /// Builds a snapshot from column vectors laid out in schema order.
    pub fn new(schema: SchemaContract, columns: Vec<Vec<Value>>) -> Result<Self> {
        if columns.len() != schema.columns.len() {
            return Err(Error::SchemaViolation {
                table: schema.name.clone(),
                details: format!(
                    "{} column vectors for {} schema columns",
                    columns.len(),
                    schema.columns.len()
                ),
            });
        }
        let row_count = columns.first().map_or(0, Vec::len);
        if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != row_count) {
            return Err(Error::SchemaViolation {
                table: schema.name.clone(),
                details: format!(
                    "column `{}` has {} rows, expected {row_count}",
                    schema.columns[i].name,
                    c.len()
                ),
            });
        }
        Ok(TableSnapshot {
            schema,
            columns,
            row_count,
        })
    }

    pub fn from_rows(schema: SchemaContract, rows: Vec<Vec<Value>>) -> Result<Self> {
        let width = schema.columns.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::SchemaViolation {
                    table: schema.name.clone(),
                    details: format!("row {r} has {} values, expected {width}", row.len()),
                });
            }
            for (c, v) in row.into_iter().enumerate() {
                columns[c].push(v);
            }
        }
        TableSnapshot::new(schema, columns)
    }

    pub fn empty(schema: SchemaContract) -> Self {
        let columns = vec![Vec::new(); schema.columns.len()];
        TableSnapshot {
            schema,
            columns,
            row_count: 0,
        }
    }

    pub fn schema(&self) -> &SchemaContract {
        &self.schema
    }

    pub fn columns(&self) -> &[Vec<Value>] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column(&self, name: &str) -> Option<&[Value]> {
        self.schema.index_of(name).map(|i| self.columns[i].as_slice())
    }

    pub fn row(&self, r: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[r].clone()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count).map(|r| self.row(r))
    }

    pub fn into_parts(self) -> (SchemaContract, Vec<Vec<Value>>) {
        (self.schema, self.columns)
    }

    /// Replaces the schema while keeping the data. The new schema must have
    /// the same number of columns.
    pub fn with_schema(self, schema: SchemaContract) -> Result<Self> {
        TableSnapshot::new(schema, self.columns)
    }

    pub(crate) fn encode_payload(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u8(b'D').len(self.columns.len()).u64(self.row_count as u64);
        for col in &self.columns {
            for v in col {
                encode_value(&mut e, v);
            }
        }
        e.finish()
    }

    pub(crate) fn decode_payload(bytes: &[u8], schema: SchemaContract, row_count: usize) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        d.expect_tag(b"D")?;
        let width = d.len()?;
        let rows = d.u64()? as usize;
        if width != schema.columns.len() || rows != row_count {
            return Err(DecodeError("payload shape disagrees with snapshot record".into()));
        }
        let mut columns = Vec::with_capacity(width);
        for _ in 0..width {
            let mut col = Vec::with_capacity(rows.min(bytes.len()));
            for _ in 0..rows {
                col.push(decode_value(&mut d)?);
            }
            columns.push(col);
        }
        d.finish()?;
        TableSnapshot::new(schema, columns).map_err(|e| DecodeError(e.to_string()))
    }
}

fn encode_value(e: &mut Encoder, v: &Value) {
    match v {
        Value::Null => {
            e.u8(0);
        }
        Value::Bool(b) => {
            e.u8(1).bool(*b);
        }
        Value::Int(i) => {
            e.u8(2).i64(*i);
        }
        Value::Float(x) => {
            e.u8(3).f64(*x);
        }
        Value::Str(s) => {
            e.u8(4).str(s);
        }
        Value::Timestamp(t) => {
            e.u8(5).i64(*t);
        }
    }
}

fn decode_value(d: &mut Decoder<'_>) -> Result<Value, DecodeError> {
    Ok(match d.u8()? {
        0 => Value::Null,
        1 => Value::Bool(d.bool()?),
        2 => Value::Int(d.i64()?),
        3 => Value::Float(d.f64()?),
        4 => Value::Str(d.str()?),
        5 => Value::Timestamp(d.i64()?),
        t => return Err(DecodeError(format!("unknown value tag {t}"))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BaseType, ColumnType};

    fn schema() -> SchemaContract {
        SchemaContract::of(
            "t",
            &[
                ("a", ColumnType::required(BaseType::Int64)),
                ("b", ColumnType::nullable(BaseType::String)),
            ],
        )
    }

    #[test]
    fn ragged_columns_are_rejected() {
        let err = TableSnapshot::new(schema(), vec![vec![Value::Int(1)], vec![]]).unwrap_err();
        assert_eq!(err.code(), "SchemaViolation");
    }

    #[test]
    fn payload_round_trips() {
        let t = TableSnapshot::from_rows(
            schema(),
            vec![
                vec![Value::Int(1), Value::Null],
                vec![Value::Int(-7), Value::Str("x".into())],
            ],
        )
        .unwrap();
        let bytes = t.encode_payload();
        let back = TableSnapshot::decode_payload(&bytes, schema(), 2).unwrap();
        assert_eq!(back, t);
        assert!(TableSnapshot::decode_payload(&bytes, schema(), 3).is_err());
    }
}
