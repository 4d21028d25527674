use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::types::{BaseType, ColumnType};

/// `Schema.column`, used to express inheritance between contracts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnPath {
    pub schema: String,
    pub column: String,
}

impl ColumnPath {
    pub fn new(schema: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnPath {
            schema: schema.into(),
            column: column.into(),
        }
    }
}

impl fmt::Display for ColumnPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.schema, self.column)
    }
}

/// Where a column comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "from", rename_all = "snake_case")]
pub enum ColumnOrigin {
    Fresh,
    Inherited(ColumnPath),
    InheritedNarrowed(ColumnPath),
    InheritedNotNull(ColumnPath),
}

impl ColumnOrigin {
    pub fn source(&self) -> Option<&ColumnPath> {
        match self {
            ColumnOrigin::Fresh => None,
            ColumnOrigin::Inherited(p) | ColumnOrigin::InheritedNarrowed(p) | ColumnOrigin::InheritedNotNull(p) => {
                Some(p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnContract {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    pub origin: ColumnOrigin,
}

impl ColumnContract {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        ColumnContract {
            name: name.into(),
            ty,
            origin: ColumnOrigin::Fresh,
        }
    }

    pub fn with_origin(mut self, origin: ColumnOrigin) -> Self {
        self.origin = origin;
        self
    }
}

/// A named, ordered set of typed columns. Column names are unique and there
/// is at least one column.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SchemaContract {
    pub name: String,
    pub columns: Vec<ColumnContract>,
}

impl SchemaContract {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnContract>) -> Result<Self> {
        let name = name.into();
        if columns.is_empty() {
            return Err(Error::InvalidName {
                name,
                reason: "a schema needs at least one column".into(),
            });
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(SchemaContract { name, columns })
    }

    /// Convenience constructor for fresh columns, mostly for tests.
    pub fn of(name: &str, columns: &[(&str, ColumnType)]) -> Self {
        SchemaContract::new(name, columns.iter().map(|(n, t)| ColumnContract::new(*n, *t)).collect())
            .expect("valid schema literal")
    }

    pub fn column(&self, name: &str) -> Option<&ColumnContract> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Same column names and types in the same order; names and origins
    /// are ignored.
    pub fn same_shape(&self, other: &SchemaContract) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.ty == b.ty)
    }

    pub(crate) fn encode(&self, e: &mut Encoder) {
        e.str(&self.name).len(self.columns.len());
        for c in &self.columns {
            e.str(&c.name).u8(c.ty.base.tag()).bool(c.ty.nullable);
            match &c.origin {
                ColumnOrigin::Fresh => {
                    e.u8(0);
                }
                ColumnOrigin::Inherited(p) => {
                    e.u8(1).str(&p.schema).str(&p.column);
                }
                ColumnOrigin::InheritedNarrowed(p) => {
                    e.u8(2).str(&p.schema).str(&p.column);
                }
                ColumnOrigin::InheritedNotNull(p) => {
                    e.u8(3).str(&p.schema).str(&p.column);
                }
            }
        }
    }

    pub(crate) fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let name = d.str()?;
        let n = d.len()?;
        let mut columns = Vec::with_capacity(n);
        for _ in 0..n {
            let cname = d.str()?;
            let tag = d.u8()?;
            let base = BaseType::from_tag(tag).ok_or_else(|| DecodeError(format!("unknown type tag {tag}")))?;
            let nullable = d.bool()?;
            let origin = match d.u8()? {
                0 => ColumnOrigin::Fresh,
                k @ 1..=3 => {
                    let p = ColumnPath::new(d.str()?, d.str()?);
                    match k {
                        1 => ColumnOrigin::Inherited(p),
                        2 => ColumnOrigin::InheritedNarrowed(p),
                        _ => ColumnOrigin::InheritedNotNull(p),
                    }
                }
                k => return Err(DecodeError(format!("unknown origin tag {k}"))),
            };
            columns.push(ColumnContract {
                name: cname,
                ty: ColumnType { base, nullable },
                origin,
            });
        }
        SchemaContract::new(name, columns).map_err(|e| DecodeError(e.to_string()))
    }
}

impl fmt::Display for SchemaContract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {{ ", self.name)?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", c.name, c.ty)?;
        }
        f.write_str(" }")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_and_empty() {
        let t = ColumnType::required(BaseType::Int64);
        assert!(matches!(
            SchemaContract::new("s", vec![ColumnContract::new("a", t), ColumnContract::new("a", t)]),
            Err(Error::DuplicateColumn(_))
        ));
        assert!(SchemaContract::new("s", vec![]).is_err());
    }

    #[test]
    fn encoding_round_trips() {
        let s = SchemaContract::new(
            "Grand",
            vec![
                ColumnContract::new("col2", ColumnType::required(BaseType::Timestamp))
                    .with_origin(ColumnOrigin::Inherited(ColumnPath::new("ChildSchema", "col2"))),
                ColumnContract::new("col4", ColumnType::required(BaseType::Int64))
                    .with_origin(ColumnOrigin::InheritedNarrowed(ColumnPath::new("ChildSchema", "col4"))),
            ],
        )
        .unwrap();
        let mut e = Encoder::new();
        s.encode(&mut e);
        let bytes = e.finish();
        let mut d = Decoder::new(&bytes);
        assert_eq!(SchemaContract::decode(&mut d).unwrap(), s);
        d.finish().unwrap();
    }
}
