//! `lakekit`: a single-node, file-backed versioned table catalog with typed
//! pipeline contracts, transactional pipeline runs and a bounded model
//! checker for the branch/run protocol.
//!
//! The main entry point is [`Repo`].

pub mod catalog;
mod codec;
pub mod contracts;
pub mod error;
pub mod lang;
pub mod merge;
pub mod model;
pub mod run;
pub mod table;
pub mod types;

pub use catalog::{
    Branch, BranchClass, Commit, CommitEntry, CommitId, Policy, Ref, Repo, RepoOptions, SnapshotId, Tag, MAIN,
};
pub use error::{Error, Result};
pub use table::TableSnapshot;
pub use types::{BaseType, ColumnType, Value};
