//! Ids and the canonical encodings of commits and snapshot records.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::contracts::SchemaContract;

macro_rules! digest_id {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub(crate) String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }

            pub fn short(&self) -> &str {
                &self.0[..self.0.len().min(12)]
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

digest_id!(
    /// Digest of a snapshot record's canonical bytes.
    SnapshotId
);
digest_id!(
    /// Digest of a commit's canonical bytes.
    CommitId
);

const COMMIT_TAG: &[u8] = b"lakekit:commit\0";
const SNAPSHOT_TAG: &[u8] = b"lakekit:snapshot\0";

/// An immutable lake state: the full table map plus parent links.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub tables: BTreeMap<String, SnapshotId>,
    pub parents: Vec<CommitId>,
    pub message: String,
    pub author: String,
    pub timestamp: i64,
}

impl Commit {
    pub fn is_merge(&self) -> bool {
        self.parents.len() > 1
    }

    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        for b in COMMIT_TAG {
            e.u8(*b);
        }
        e.len(self.tables.len());
        for (name, id) in &self.tables {
            e.str(name).str(&id.0);
        }
        e.len(self.parents.len());
        for p in &self.parents {
            e.str(&p.0);
        }
        e.str(&self.message).str(&self.author).i64(self.timestamp);
        e.finish()
    }

    pub(crate) fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        d.expect_tag(COMMIT_TAG)?;
        let n = d.len()?;
        let mut tables = BTreeMap::new();
        let mut last: Option<String> = None;
        for _ in 0..n {
            let name = d.str()?;
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(DecodeError("commit table names not strictly sorted".into()));
            }
            last = Some(name.clone());
            tables.insert(name, SnapshotId(d.str()?));
        }
        let np = d.len()?;
        let mut parents = Vec::with_capacity(np);
        for _ in 0..np {
            parents.push(CommitId(d.str()?));
        }
        let commit = Commit {
            tables,
            parents,
            message: d.str()?,
            author: d.str()?,
            timestamp: d.i64()?,
        };
        d.finish()?;
        Ok(commit)
    }
}

/// Metadata object of a table snapshot; the rows live in a separate
/// payload object referenced by `data`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct SnapshotRecord {
    pub schema: SchemaContract,
    pub data: String,
    pub row_count: u64,
}

impl SnapshotRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        for b in SNAPSHOT_TAG {
            e.u8(*b);
        }
        self.schema.encode(&mut e);
        e.str(&self.data).u64(self.row_count);
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(bytes);
        d.expect_tag(SNAPSHOT_TAG)?;
        let schema = SchemaContract::decode(&mut d)?;
        let data = d.str()?;
        let row_count = d.u64()?;
        d.finish()?;
        Ok(SnapshotRecord {
            schema,
            data,
            row_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_round_trips_and_is_canonical() {
        let mut tables = BTreeMap::new();
        tables.insert("b".to_string(), SnapshotId("22".repeat(32)));
        tables.insert("a".to_string(), SnapshotId("11".repeat(32)));
        let c = Commit {
            tables,
            parents: vec![CommitId("00".repeat(32))],
            message: "m".into(),
            author: "x".into(),
            timestamp: 7,
        };
        let bytes = c.encode();
        assert_eq!(Commit::decode(&bytes).unwrap(), c);
        assert_eq!(c.clone().encode(), bytes);
        assert!(SnapshotRecord::decode(&bytes).is_err());
    }
}
