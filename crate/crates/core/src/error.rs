use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. [`Error::code`] gives the stable
/// identifier used in diagnostics and by the command line.
#[derive(Debug, Error)]
pub enum Error {
    // -- repository and refs
    #[error("repository already initialized at {0}")]
    AlreadyInitialized(PathBuf),
    #[error("no repository at {0}")]
    NotARepository(PathBuf),
    #[error("repository at {0} is locked by another process")]
    RepoLocked(PathBuf),
    #[error("unsupported repository format: {0}")]
    UnsupportedFormat(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("corrupt repository: {0}")]
    Corrupt(String),
    #[error("unknown ref `{0}`")]
    UnknownRef(String),
    #[error("invalid name `{name}`: {reason}")]
    InvalidName { name: String, reason: String },
    #[error("branch `{0}` already exists")]
    BranchExists(String),
    #[error("tag `{0}` already exists")]
    TagExists(String),
    #[error("cannot delete branch `main`")]
    CannotDeleteMain,
    #[error("branch `{0}` is aborted and read-only")]
    AbortedBranchImmutable(String),
    #[error("`{0}` belongs to an aborted run; enable the matching allow-*-from-aborted policy to use it")]
    AbortedSourceForbidden(String),
    #[error("`{0}` is a transactional branch owned by a running pipeline")]
    TransactionalBranchPrivate(String),
    #[error("branch `{0}` is not a normal branch")]
    NotNormalBranch(String),
    #[error("compare-and-set failed on `{branch}`: expected head {expected}, found {actual}")]
    CasConflict {
        branch: String,
        expected: String,
        actual: String,
    },
    #[error("snapshot for `{table}` violates its schema: {details}")]
    SchemaViolation { table: String, details: String },
    #[error("no table `{table}` at commit {commit}")]
    NoSuchTable { table: String, commit: String },
    #[error("table `{0}` already exists on the branch")]
    TableExists(String),

    // -- merges
    #[error("merge conflict on tables: {}", tables.join(", "))]
    MergeConflict { tables: Vec<String> },

    // -- transformation language
    #[error("syntax error at {line}:{col}: expected {expected}, found {found}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
        found: String,
    },
    #[error("unknown column `{name}` (available: {})", available.join(", "))]
    UnknownColumn { name: String, available: Vec<String> },
    #[error("type mismatch in `{expr}`: expected {expected}, found {found}")]
    TypeMismatch {
        expr: String,
        expected: String,
        found: String,
    },
    #[error("column `{column}` narrows {from} to {to} without an explicit cast")]
    IllegalNarrowing { column: String, from: String, to: String },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("expression `{0}` needs an alias")]
    MissingAlias(String),
    #[error("misplaced expression: {0}")]
    MisplacedExpr(String),
    #[error("unknown input table `{0}`")]
    UnknownInput(String),
    #[error("null value cast to non-nullable type in column `{column}` at row {row}")]
    RuntimeCastNull { column: String, row: usize },
    #[error("cast failed in column `{column}` at row {row}: {message}")]
    CastFailed {
        column: String,
        row: usize,
        message: String,
    },
    #[error("integer overflow in column `{column}` at row {row}")]
    ArithmeticOverflow { column: String, row: usize },
    #[error("input does not match its contract: {0}")]
    InputContractViolation(String),

    // -- contracts and manifests
    #[error("manifest parse error at {line}:{col}: {message}")]
    ManifestParse { line: usize, col: usize, message: String },
    #[error("dependency cycle between nodes: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("unknown schema `{0}`")]
    UnknownSchema(String),
    #[error("pipeline has no nodes")]
    EmptyPlan,

    // -- runs
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` is not aborted")]
    RunNotAborted(String),
    #[error("resuming from an aborted branch requires allow_branch_from_aborted")]
    GuardrailDisabled,
    #[error("nodes upstream of the failure changed: {}", .0.join(", "))]
    UpstreamManifestChanged(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("run record `{0}` is final and cannot change")]
    RegistryImmutable(String),
    #[error("run `{0}` has no archived manifest to re-execute")]
    NotReproducible(String),
    #[error("run `{0}` has already finished")]
    RunFinished(String),

    // -- model checker
    #[error("state space exceeds the cap of {cap} states")]
    BoundsTooLarge { cap: usize },
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("unknown invariant `{0}`")]
    UnknownInvariant(String),
    #[error("trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("action `{action}` at step {step} is not enabled")]
    ActionNotEnabled { step: usize, action: String },
    #[error("replay diverged at step {step}: expected {expected}, actual {actual}")]
    Divergence {
        step: usize,
        expected: String,
        actual: String,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Stable machine-readable identifier of the error kind.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            AlreadyInitialized(_) => "AlreadyInitialized",
            NotARepository(_) => "NotARepository",
            RepoLocked(_) => "RepoLocked",
            UnsupportedFormat(_) => "UnsupportedFormat",
            Io { .. } => "Io",
            Corrupt(_) => "Corrupt",
            UnknownRef(_) => "UnknownRef",
            InvalidName { .. } => "InvalidName",
            BranchExists(_) => "BranchExists",
            TagExists(_) => "TagExists",
            CannotDeleteMain => "CannotDeleteMain",
            AbortedBranchImmutable(_) => "AbortedBranchImmutable",
            AbortedSourceForbidden(_) => "AbortedSourceForbidden",
            TransactionalBranchPrivate(_) => "TransactionalBranchPrivate",
            NotNormalBranch(_) => "NotNormalBranch",
            CasConflict { .. } => "CasConflict",
            SchemaViolation { .. } => "SchemaViolation",
            NoSuchTable { .. } => "NoSuchTable",
            TableExists(_) => "TableExists",
            MergeConflict { .. } => "MergeConflict",
            Syntax { .. } => "SyntaxError",
            UnknownColumn { .. } => "UnknownColumn",
            TypeMismatch { .. } => "TypeMismatch",
            IllegalNarrowing { .. } => "IllegalNarrowing",
            DuplicateColumn(_) => "DuplicateColumn",
            MissingAlias(_) => "MissingAlias",
            MisplacedExpr(_) => "MisplacedExpr",
            UnknownInput(_) => "UnknownInput",
            RuntimeCastNull { .. } => "RuntimeCastNull",
            CastFailed { .. } => "CastFailed",
            ArithmeticOverflow { .. } => "ArithmeticOverflow",
            InputContractViolation(_) => "InputContractViolation",
            ManifestParse { .. } => "ManifestParseError",
            CycleDetected(_) => "CycleDetected",
            UnknownSchema(_) => "UnknownSchema",
            EmptyPlan => "EmptyPlan",
            UnknownRun(_) => "UnknownRun",
            RunNotAborted(_) => "RunNotAborted",
            GuardrailDisabled => "GuardrailDisabled",
            UpstreamManifestChanged(_) => "UpstreamManifestChanged",
            UnknownNode(_) => "UnknownNode",
            RegistryImmutable(_) => "RegistryImmutable",
            NotReproducible(_) => "NotReproducible",
            RunFinished(_) => "RunFinished",
            BoundsTooLarge { .. } => "BoundsTooLarge",
            InvalidBounds(_) => "InvalidBounds",
            UnknownInvariant(_) => "UnknownInvariant",
            TraceParse { .. } => "TraceParseError",
            ActionNotEnabled { .. } => "ActionNotEnabled",
            Divergence { .. } => "Divergence",
        }
    }
}
