//! Runtime conformance of materialised data against a contract.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::contracts::SchemaContract;
use crate::table::TableSnapshot;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The snapshot's column type cannot flow into the contract's, or a
    /// value has the wrong base type.
    TypeMismatch {
        column: String,
        expected: String,
        found: String,
        row: Option<usize>,
    },
    UnexpectedNull {
        column: String,
        row: usize,
    },
    MissingColumn {
        column: String,
    },
    ExtraColumn {
        column: String,
    },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::TypeMismatch { .. } => "TypeMismatch",
            Violation::UnexpectedNull { .. } => "UnexpectedNull",
            Violation::MissingColumn { .. } => "MissingColumn",
            Violation::ExtraColumn { .. } => "ExtraColumn",
        }
    }

    pub fn column(&self) -> &str {
        match self {
            Violation::TypeMismatch { column, .. }
            | Violation::UnexpectedNull { column, .. }
            | Violation::MissingColumn { column }
            | Violation::ExtraColumn { column } => column,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TypeMismatch {
                column,
                expected,
                found,
                row: Some(r),
            } => write!(f, "TypeMismatch({column}, row {r}): expected {expected}, found {found}"),
            Violation::TypeMismatch {
                column,
                expected,
                found,
                row: None,
            } => write!(f, "TypeMismatch({column}): expected {expected}, found {found}"),
            Violation::UnexpectedNull { column, row } => write!(f, "UnexpectedNull({column}, {row})"),
            Violation::MissingColumn { column } => write!(f, "MissingColumn({column})"),
            Violation::ExtraColumn { column } => write!(f, "ExtraColumn({column})"),
        }
    }
}

/// Outcome of [`validate_data`]. Conformant iff `violations` is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    pub fn is_conformant(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        const SHOWN: usize = 5;
        let mut parts: Vec<String> = self.violations.iter().take(SHOWN).map(|v| v.to_string()).collect();
        if self.violations.len() > SHOWN {
            parts.push(format!("and {} more", self.violations.len() - SHOWN));
        }
        parts.join("; ")
    }
}

/// Checks `snapshot` against `contract` column by column. Columns are
/// matched by name.
pub fn validate_data(snapshot: &TableSnapshot, contract: &SchemaContract) -> ConformanceReport {
    validate_data_skipping(snapshot, contract, &HashSet::new())
}

/// Like [`validate_data`] but omits the per-row null scan for the named
/// columns. Used when the plan proves those columns cannot hold nulls.
pub fn validate_data_skipping(
    snapshot: &TableSnapshot,
    contract: &SchemaContract,
    skip_null_checks: &HashSet<String>,
) -> ConformanceReport {
    let mut violations = Vec::new();
    let actual = snapshot.schema();
    for c in &contract.columns {
        let Some(i) = actual.index_of(&c.name) else {
            violations.push(Violation::MissingColumn { column: c.name.clone() });
            continue;
        };
        let declared = actual.columns[i].ty;
        if declared.base != c.ty.base {
            violations.push(Violation::TypeMismatch {
                column: c.name.clone(),
                expected: c.ty.to_string(),
                found: declared.to_string(),
                row: None,
            });
            continue;
        }
        let check_nulls = !c.ty.nullable && !skip_null_checks.contains(&c.name);
        for (row, v) in snapshot.columns()[i].iter().enumerate() {
            match v.base_type() {
                None if check_nulls => violations.push(Violation::UnexpectedNull {
                    column: c.name.clone(),
                    row,
                }),
                None => {}
                Some(b) if b != c.ty.base => violations.push(Violation::TypeMismatch {
                    column: c.name.clone(),
                    expected: c.ty.to_string(),
                    found: b.to_string(),
                    row: Some(row),
                }),
                Some(_) => {}
            }
        }
    }
    for a in &actual.columns {
        if contract.column(&a.name).is_none() {
            violations.push(Violation::ExtraColumn { column: a.name.clone() });
        }
    }
    ConformanceReport { violations }
}
