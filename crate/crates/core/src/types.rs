//! Column types and cell values shared by the catalog, the transformation
//! language and the contract checker.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// Physical base type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseType {
    String,
    Int64,
    Float64,
    Timestamp,
    Bool,
}

impl BaseType {
    pub const ALL: [BaseType; 5] = [
        BaseType::String,
        BaseType::Int64,
        BaseType::Float64,
        BaseType::Timestamp,
        BaseType::Bool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseType::String => "string",
            BaseType::Int64 => "int64",
            BaseType::Float64 => "float64",
            BaseType::Timestamp => "timestamp",
            BaseType::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "string" => BaseType::String,
            "int64" => BaseType::Int64,
            "float64" => BaseType::Float64,
            "timestamp" => BaseType::Timestamp,
            "bool" => BaseType::Bool,
            _ => return None,
        })
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, BaseType::Int64 | BaseType::Float64)
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            BaseType::String => 0,
            BaseType::Int64 => 1,
            BaseType::Float64 => 2,
            BaseType::Timestamp => 3,
            BaseType::Bool => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        BaseType::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for BaseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a base type may change between two places in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conversion {
    Same,
    /// Implicitly legal: no information can be lost.
    Widening,
    /// Legal only behind an explicit cast.
    Narrowing,
    Illegal,
}

impl Conversion {
    fn combine(self, other: Conversion) -> Conversion {
        use Conversion::*;
        match (self, other) {
            (Illegal, _) | (_, Illegal) => Illegal,
            (Narrowing, _) | (_, Narrowing) => Narrowing,
            (Widening, _) | (_, Widening) => Widening,
            (Same, Same) => Same,
        }
    }
}

/// A column type: base type plus nullability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnType {
    pub base: BaseType,
    pub nullable: bool,
}

impl ColumnType {
    pub const fn new(base: BaseType, nullable: bool) -> Self {
        ColumnType { base, nullable }
    }

    pub const fn required(base: BaseType) -> Self {
        ColumnType { base, nullable: false }
    }

    pub const fn nullable(base: BaseType) -> Self {
        ColumnType { base, nullable: true }
    }

    pub fn with_nullable(self, nullable: bool) -> Self {
        ColumnType { nullable, ..self }
    }

    /// Classifies the change `self -> to`.
    ///
    /// Widening is int64 to float64 and non-nullable to nullable. Narrowing is
    /// float64 to int64, string to timestamp (parse), and nullable to
    /// non-nullable. Everything else is illegal.
    pub fn conversion_to(self, to: ColumnType) -> Conversion {
        let base = match (self.base, to.base) {
            (a, b) if a == b => Conversion::Same,
            (BaseType::Int64, BaseType::Float64) => Conversion::Widening,
            (BaseType::Float64, BaseType::Int64) => Conversion::Narrowing,
            (BaseType::String, BaseType::Timestamp) => Conversion::Narrowing,
            _ => Conversion::Illegal,
        };
        let null = match (self.nullable, to.nullable) {
            (a, b) if a == b => Conversion::Same,
            (false, true) => Conversion::Widening,
            _ => Conversion::Narrowing,
        };
        base.combine(null)
    }

    /// True when a value of type `self` may flow into `to` without a cast.
    pub fn assignable_to(self, to: ColumnType) -> bool {
        matches!(self.conversion_to(to), Conversion::Same | Conversion::Widening)
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.name())?;
        if self.nullable {
            f.write_str("?")?;
        }
        Ok(())
    }
}

impl FromStr for ColumnType {
    type Err = String;

    /// Parses `int64`, `string?` and friends.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, nullable) = match s.strip_suffix('?') {
            Some(rest) => (rest.trim_end(), true),
            None => (s, false),
        };
        BaseType::from_name(name)
            .map(|base| ColumnType { base, nullable })
            .ok_or_else(|| format!("unknown type `{s}`"))
    }
}

/// A single cell value. Timestamps are microseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Timestamp(i64),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// Base type of a non-null value.
    pub fn base_type(&self) -> Option<BaseType> {
        Some(match self {
            Value::Null => return None,
            Value::Bool(_) => BaseType::Bool,
            Value::Int(_) => BaseType::Int64,
            Value::Float(_) => BaseType::Float64,
            Value::Str(_) => BaseType::String,
            Value::Timestamp(_) => BaseType::Timestamp,
        })
    }

    /// True if this value is a legal inhabitant of `ty`.
    pub fn conforms_to(&self, ty: ColumnType) -> bool {
        match self.base_type() {
            None => ty.nullable,
            Some(b) => b == ty.base,
        }
    }

    /// Total order used for sorting group keys: nulls first, then by value.
    /// Floats use IEEE total ordering.
    pub fn total_cmp(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Less,
            (_, Null) => Ordering::Greater,
            (Bool(a), Bool(b)) => a.cmp(b),
            (Int(a), Int(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Str(a), Str(b)) => a.cmp(b),
            (Timestamp(a), Timestamp(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Float(_) => 3,
            Value::Str(_) => 4,
            Value::Timestamp(_) => 5,
        }
    }

    /// Renders the value the way the CLI and CSV import read it back.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Bool(b) => b.to_string(),
            Value::Int(i) => i.to_string(),
            Value::Float(x) => format!("{x:?}"),
            Value::Str(s) => s.clone(),
            Value::Timestamp(t) => format_timestamp(*t),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => (*b).into(),
            Value::Int(i) => (*i).into(),
            Value::Float(x) => serde_json::Number::from_f64(*x)
                .map(serde_json::Value::Number)
                .unwrap_or_else(|| serde_json::Value::String(format!("{x:?}"))),
            Value::Str(s) => s.clone().into(),
            Value::Timestamp(t) => format_timestamp(*t).into(),
        }
    }

    /// Parses a textual cell of the given base type. Empty text is not
    /// special-cased here; callers decide what an empty cell means.
    pub fn parse_as(text: &str, base: BaseType) -> Result<Value, String> {
        match base {
            BaseType::String => Ok(Value::Str(text.to_string())),
            BaseType::Int64 => text
                .trim()
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|e| format!("invalid int64 `{text}`: {e}")),
            BaseType::Float64 => text
                .trim()
                .parse::<f64>()
                .map(Value::Float)
                .map_err(|e| format!("invalid float64 `{text}`: {e}")),
            BaseType::Bool => match text.trim() {
                "true" => Ok(Value::Bool(true)),
                "false" => Ok(Value::Bool(false)),
                other => Err(format!("invalid bool `{other}`")),
            },
            BaseType::Timestamp => parse_timestamp(text).map(Value::Timestamp),
        }
    }
}

/// Parses an ISO-8601 timestamp. Offsets are normalised to UTC; values
/// without an offset are taken to be UTC already.
pub fn parse_timestamp(text: &str) -> Result<i64, String> {
    let t = text.trim();
    if let Some(n) = t.strip_prefix('@').and_then(|r| r.strip_suffix("us")) {
        return n.parse().map_err(|_| format!("invalid timestamp `{text}`"));
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Ok(dt.with_timezone(&Utc).timestamp_micros());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ndt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Ok(ndt.and_utc().timestamp_micros());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_micros());
    }
    Err(format!("invalid timestamp `{text}`"))
}

/// RFC 3339 in UTC; instants outside chrono's range print as `@<n>us`,
/// which [`parse_timestamp`] also accepts.
pub fn format_timestamp(micros: i64) -> String {
    match DateTime::<Utc>::from_timestamp_micros(micros) {
        Some(dt) => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        None => format!("@{micros}us"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_follow_narrowing_relation() {
        let f = ColumnType::required(BaseType::Float64);
        let i = ColumnType::required(BaseType::Int64);
        let s = ColumnType::required(BaseType::String);
        let ts = ColumnType::required(BaseType::Timestamp);
        assert_eq!(i.conversion_to(f), Conversion::Widening);
        assert_eq!(f.conversion_to(i), Conversion::Narrowing);
        assert_eq!(s.conversion_to(ts), Conversion::Narrowing);
        assert_eq!(ts.conversion_to(s), Conversion::Illegal);
        assert_eq!(i.conversion_to(i.with_nullable(true)), Conversion::Widening);
        assert_eq!(i.with_nullable(true).conversion_to(i), Conversion::Narrowing);
        assert_eq!(f.with_nullable(true).conversion_to(i), Conversion::Narrowing);
        assert_eq!(i.conversion_to(s), Conversion::Illegal);
        assert!(i.assignable_to(f.with_nullable(true)));
        assert!(!f.assignable_to(i));
    }

    #[test]
    fn column_type_parses_and_prints() {
        for text in ["int64", "string?", "timestamp", "bool?", "float64"] {
            let ty: ColumnType = text.parse().unwrap();
            assert_eq!(ty.to_string(), text);
        }
        assert!("int32".parse::<ColumnType>().is_err());
    }

    #[test]
    fn timestamps_round_trip_through_text() {
        let t = parse_timestamp("2024-03-01T12:30:00Z").unwrap();
        assert_eq!(format_timestamp(t), "2024-03-01T12:30:00Z");
        assert_eq!(
            parse_timestamp("2024-03-01").unwrap(),
            parse_timestamp("2024-03-01T00:00:00+00:00").unwrap()
        );
        assert_eq!(parse_timestamp("2024-03-01T14:30:00+02:00").unwrap(), t);
        assert!(parse_timestamp("yesterday").is_err());
    }
}
