//! App definitions: the component tree, validators, cell bindings, report
//! template and submission schema, with validation at authoring time and
//! at run time. The document format is described in `docs/definition-schema.md`.

mod definition;
mod inputs;
mod pattern;
mod validate;

pub(crate) use definition::is_placeholder_char;
pub use definition::{
    placeholders, AggregateReport, AppDefinition, Bindings, CellBinding, CellTarget, Component,
    ComponentKind, Display, Issue, Link, ReportBlock, ReportTemplate, SubmissionSchema, Validator,
    ValueType,
};
pub use inputs::{validate_inputs, FieldErrors, RawValue, TypedEdit};
pub use pattern::Pattern;
pub(crate) use validate::{resolve, ResolvedBindings};
pub use validate::{validate_definition, Resolved};
