//! Schema contracts, pipeline manifests, plan-time checking, runtime data
//! conformance, column lineage and validation-skip planning.

mod check;
mod diagnostic;
mod lineage;
mod manifest;
mod schema;
mod skips;
mod validate;

pub use check::{check_plan, check_plan_detailed, PlanCheck};
pub use diagnostic::{has_errors, Diagnostic, Severity, Span};
pub use lineage::{lineage, LineageKind, LineageTree};
pub use manifest::{load_manifest, parse_manifest, NodeContract, PipelinePlan};
pub use schema::{ColumnContract, ColumnOrigin, ColumnPath, SchemaContract};
pub use skips::{plan_validation_skips, CheckKind, SkippableCheck};
pub use validate::{validate_data, validate_data_skipping, ConformanceReport, Violation};
