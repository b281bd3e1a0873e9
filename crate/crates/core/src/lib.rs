//! Core of wrapsheet: a self-contained spreadsheet engine plus the
//! declarative app definitions that wrap workbooks in validated forms.
//!
//! Everything here is pure computation over immutable values and builds
//! with `no_std` + `alloc`. Storage, HTTP and the CLI live in the
//! `wrapsheet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod address;
pub mod formula;
pub mod pipeline;
pub mod report;
pub mod schema;
pub mod submission;
pub mod value;
pub mod workbook;

pub use address::{CellRef, Pos, RangeRef, SheetId};
pub use formula::{full_recalculate, recalculate, DependencyGraph, Expr, RecalcStats};
pub use pipeline::{input_digest, OutputValue, Outputs, PreparedApp, RunResult};
pub use schema::{validate_definition, validate_inputs, AppDefinition, Issue, RawValue, TypedEdit};
pub use value::{CellValue, ErrorCode};
pub use workbook::{BindingError, CellView, ContentHash, Workbook, WorkbookBuilder, WorkbookError};
