#![allow(dead_code)]

pub mod plans;

use lakekit::contracts::SchemaContract;
use lakekit::types::format_timestamp;
use lakekit::{BaseType, ColumnType, Repo, RepoOptions, TableSnapshot, Value, MAIN};
use tempfile::TempDir;

pub const SCHEMAS: &str = "\
source raw_table: RawSchema
schema RawSchema { col1: string, col2: timestamp, col3: int64 }
schema ParentSchema {
    col1: string
    col2: timestamp from RawSchema.col2
    _S: int64
}
schema ChildSchema {
    col2: timestamp from ParentSchema.col2
    col4: float64
    col5: string nullable
}
schema Grand {
    col2: timestamp from ChildSchema.col2
    col4: int64 from ChildSchema.col4
}
";

pub const PARENT: &str = "\
-- parent_table: ParentSchema <- raw_table
select col1, col2, sum(col3) as _S from raw_table group by col1, col2
";

pub const CHILD: &str = "\
-- child_table: ChildSchema <- parent_table
select col2, 0.0 as col4, null::string? as col5 from parent_table
";

pub const GRAND: &str = "\
-- grand_child: Grand <- child_table
select col2, cast(col4 as int64) as col4 from child_table
";

pub const GRAND_NO_CAST: &str = "\
-- grand_child: Grand <- child_table
select col2, col4 from child_table
";

/// The three-node parent/child/grandchild pipeline.
pub fn pipeline() -> String {
    format!("{SCHEMAS}{PARENT}{CHILD}{GRAND}")
}

pub fn pipeline_without_cast() -> String {
    format!("{SCHEMAS}{PARENT}{CHILD}{GRAND_NO_CAST}")
}

pub const FRIEND: &str = "\
schema FriendSchema {
    col2: timestamp from ChildSchema.col2
    col4: int64 from Grand.col4
    col5: string from ChildSchema.col5 notnull
}
-- family_friend: FriendSchema <- child_table, grand_child
select col2, 4_grand as col4, col5
from child_table join (select col2, col4 as 4_grand from grand_child) on col2
where col5 is not null and 4_grand - col4 < 0.5
";

/// The four-node pipeline with the binary `family_friend` node.
pub fn family_pipeline() -> String {
    format!("{}{FRIEND}", pipeline())
}

pub fn raw_schema(col3: BaseType) -> SchemaContract {
    SchemaContract::of(
        "RawSchema",
        &[
            ("col1", ColumnType::required(BaseType::String)),
            ("col2", ColumnType::required(BaseType::Timestamp)),
            ("col3", ColumnType::required(col3)),
        ],
    )
}

pub const T0: i64 = 1_700_000_000_000_000;

/// `n` raw rows over a few distinct keys; `salt` changes the sums.
pub fn raw_rows(n: usize, salt: i64) -> TableSnapshot {
    let rows = (0..n)
        .map(|i| {
            vec![
                Value::Str(format!("k{}", i % 3)),
                Value::Timestamp(T0 + (i % 2) as i64 * 3_600_000_000),
                Value::Int(i as i64 * 10 + salt),
            ]
        })
        .collect();
    TableSnapshot::from_rows(raw_schema(BaseType::Int64), rows).unwrap()
}

pub fn raw_float_rows(n: usize) -> TableSnapshot {
    let rows = (0..n)
        .map(|i| {
            vec![
                Value::Str(format!("k{}", i % 3)),
                Value::Timestamp(T0),
                Value::Float(i as f64 + 0.5),
            ]
        })
        .collect();
    TableSnapshot::from_rows(raw_schema(BaseType::Float64), rows).unwrap()
}

pub fn options() -> RepoOptions {
    RepoOptions::deterministic(1_700_000_000, 7)
}

pub fn fresh_repo() -> (TempDir, Repo) {
    let dir = tempfile::tempdir().unwrap();
    let repo = Repo::init(dir.path().join("repo"), options()).unwrap();
    (dir, repo)
}

/// A repository whose `main` holds `raw_table`.
pub fn repo_with_raw(raw: &TableSnapshot) -> (TempDir, Repo) {
    let (dir, repo) = fresh_repo();
    let head = repo.branch(MAIN).unwrap().head;
    repo.write_table(MAIN, "raw_table", raw, &head).unwrap();
    (dir, repo)
}

pub fn ts(micros: i64) -> String {
    format_timestamp(micros)
}
