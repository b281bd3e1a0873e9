//! App definition types and their document-level checks.
//!
//! A definition is plain data. Maps are `BTreeMap`s and optional members are
//! skipped when empty, so serializing a parsed definition gives a canonical
//! document.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::pattern::Pattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppDefinition {
    pub name: String,
    #[serde(default)]
    pub label: String,
    /// workbook id -> workbook file reference
    pub workbooks: BTreeMap<String, String>,
    pub ui: Component,
    #[serde(default)]
    pub bindings: Bindings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission: Option<SubmissionSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_report: Option<AggregateReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    TabbedPane,
    Group,
    ChoiceList,
    RadioButtons,
    InputField,
    OutputDisplay,
    StaticText,
}

impl ComponentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::TabbedPane => "tabbed-pane",
            ComponentKind::Group => "group",
            ComponentKind::ChoiceList => "choice-list",
            ComponentKind::RadioButtons => "radio-buttons",
            ComponentKind::InputField => "input-field",
            ComponentKind::OutputDisplay => "output-display",
            ComponentKind::StaticText => "static-text",
        }
    }

    pub fn is_container(self) -> bool {
        matches!(self, ComponentKind::TabbedPane | ComponentKind::Group)
    }

    /// Kinds that take a value from the user and bind it to a cell.
    pub fn is_input(self) -> bool {
        matches!(
            self,
            ComponentKind::ChoiceList | ComponentKind::RadioButtons | ComponentKind::InputField
        )
    }

    fn has_options(self) -> bool {
        matches!(
            self,
            ComponentKind::ChoiceList | ComponentKind::RadioButtons
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Number,
    Text,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Display {
    #[default]
    Scalar,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub kind: ComponentKind,
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Component>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub value_type: Option<ValueType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validators: Vec<Validator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<Display>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Component {
    /// Depth-first walk, parents before children, with document paths.
    pub fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a Component)) {
        f(path, self);
        for (i, child) in self.children.iter().enumerate() {
            child.walk(&format!("{path}.children[{i}]"), f);
        }
    }

    pub fn find(&self, id: &str) -> Option<&Component> {
        if self.id == id {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(id))
    }

    /// The type an input component's value takes. Choice kinds are text.
    pub fn input_type(&self) -> Option<ValueType> {
        match self.kind {
            ComponentKind::InputField => self.value_type,
            ComponentKind::ChoiceList | ComponentKind::RadioButtons => Some(ValueType::Text),
            _ => None,
        }
    }

    pub fn is_required(&self) -> bool {
        self.validators
            .iter()
            .any(|v| matches!(v, Validator::Required))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Validator {
    Required,
    NumberRange {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    Pattern {
        regex: String,
    },
    OneOf {
        options: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bindings {
    /// input component id -> cell
    #[serde(default)]
    pub inputs: BTreeMap<String, CellBinding>,
    /// output id -> cell or range
    #[serde(default)]
    pub outputs: BTreeMap<String, CellTarget>,
    /// Value flow between workbooks, applied before the target workbook is
    /// recalculated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<Link>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellBinding {
    pub wb: String,
    pub cell: String,
}

/// A single cell or a rectangular range in one workbook. Exactly one of
/// `cell` and `range` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellTarget {
    pub wb: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<String>,
}

impl CellTarget {
    pub fn reference(&self) -> &str {
        self.cell.as_deref().or(self.range.as_deref()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub from: CellTarget,
    pub to: CellTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportTemplate {
    pub title: String,
    #[serde(default)]
    pub blocks: Vec<ReportBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReportBlock {
    /// Paragraph with `{output-id}` placeholders.
    Text { text: String },
    /// Rows of a range output, with optional column headings.
    Table {
        output: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        header: Vec<String>,
    },
    /// Series data from a range output: the first column holds category
    /// labels, every further column is one series.
    Chart {
        label: String,
        output: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        series: Vec<String>,
    },
}

impl ReportTemplate {
    /// Output ids the template reads, with the document path of each use.
    pub fn referenced_outputs(&self) -> Vec<(String, String, bool)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let path = format!("blocks[{i}]");
            match block {
                ReportBlock::Text { text } => {
                    for name in placeholders(text) {
                        out.push((format!("{path}.text"), name.to_string(), false));
                    }
                }
                ReportBlock::Table { output, .. } | ReportBlock::Chart { output, .. } => {
                    out.push((format!("{path}.output"), output.clone(), true));
                }
            }
        }
        out
    }
}

/// Placeholder names in a text block: `{name}` where name is a non-empty run
/// of letters, digits, `_`, `-` or `.`. Other braces are literal text.
pub fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let len = after
            .find(|c: char| !is_placeholder_char(c))
            .unwrap_or(after.len());
        if len > 0 && after[len..].starts_with('}') {
            out.push(&after[..len]);
            rest = &after[len + 1..];
        } else {
            rest = after;
        }
    }
    out
}

pub(crate) fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')
}

/// Keyed rows persisted per run. The source output is a range whose columns
/// are the keys followed by the measures; rows with every key blank are
/// ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionSchema {
    pub output: String,
    pub keys: Vec<String>,
    pub measures: Vec<String>,
}

impl SubmissionSchema {
    pub fn width(&self) -> usize {
        self.keys.len() + self.measures.len()
    }
}

/// Where aggregated submissions are written for report generation: a
/// region in one of the app's workbooks, plus the report rendered from that
/// workbook's outputs afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateReport {
    pub wb: String,
    pub region: String,
    pub report: ReportTemplate,
}

/// A problem in a definition, located by its path in the document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

impl Issue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Issue {
        Issue {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl AppDefinition {
    /// Checks that need nothing but the document: unique component ids and
    /// per-component shape rules. Cross references are checked by
    /// [`validate_definition`](super::validate_definition).
    pub fn check(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            issues.push(Issue::new(
                "name",
                "app name must be non-empty and use only letters, digits, `-` and `_`",
            ));
        }
        let mut seen = BTreeSet::new();
        self.ui.walk("ui", &mut |path, c| {
            if c.id.is_empty() {
                issues.push(Issue::new(
                    format!("{path}.id"),
                    "component id must not be empty",
                ));
            } else if !seen.insert(c.id.as_str()) {
                issues.push(Issue::new(
                    format!("{path}.id"),
                    format!("duplicate component id `{}`", c.id),
                ));
            }
            check_component(path, c, &mut issues);
        });
        for (name, target) in &self.bindings.outputs {
            check_target(&format!("bindings.outputs.{name}"), target, &mut issues);
        }
        for (i, link) in self.bindings.links.iter().enumerate() {
            check_target(
                &format!("bindings.links[{i}].from"),
                &link.from,
                &mut issues,
            );
            check_target(&format!("bindings.links[{i}].to"), &link.to, &mut issues);
        }
        if let Some(sub) = &self.submission {
            if sub.keys.is_empty() {
                issues.push(Issue::new(
                    "submission.keys",
                    "at least one key column is required",
                ));
            }
            if sub.measures.is_empty() {
                issues.push(Issue::new(
                    "submission.measures",
                    "at least one measure column is required",
                ));
            }
            let mut names = BTreeSet::new();
            for (field, list) in [("keys", &sub.keys), ("measures", &sub.measures)] {
                for (i, name) in list.iter().enumerate() {
                    if name.is_empty() || name.contains(',') {
                        issues.push(Issue::new(
                            format!("submission.{field}[{i}]"),
                            "column names must be non-empty and contain no commas",
                        ));
                    } else if !names.insert(name.as_str()) {
                        issues.push(Issue::new(
                            format!("submission.{field}[{i}]"),
                            format!("duplicate column `{name}`"),
                        ));
                    }
                }
            }
        }
        issues
    }
}

fn check_target(path: &str, t: &CellTarget, issues: &mut Vec<Issue>) {
    if t.cell.is_some() == t.range.is_some() {
        issues.push(Issue::new(
            path,
            "exactly one of `cell` and `range` must be given",
        ));
    }
}

fn check_component(path: &str, c: &Component, issues: &mut Vec<Issue>) {
    let kind = c.kind.as_str();
    let mut not_allowed = |field: &str, present: bool| {
        if present {
            issues.push(Issue::new(
                format!("{path}.{field}"),
                format!("`{field}` is not allowed on {kind}"),
            ));
        }
    };
    not_allowed("children", !c.kind.is_container() && !c.children.is_empty());
    not_allowed("options", !c.kind.has_options() && !c.options.is_empty());
    not_allowed(
        "type",
        c.kind != ComponentKind::InputField && c.value_type.is_some(),
    );
    not_allowed("validators", !c.kind.is_input() && !c.validators.is_empty());
    not_allowed(
        "output",
        c.kind != ComponentKind::OutputDisplay && c.output.is_some(),
    );
    not_allowed(
        "display",
        c.kind != ComponentKind::OutputDisplay && c.display.is_some(),
    );
    not_allowed(
        "text",
        c.kind != ComponentKind::StaticText && c.text.is_some(),
    );

    match c.kind {
        ComponentKind::TabbedPane => {
            for (i, tab) in c.children.iter().enumerate() {
                if tab.kind != ComponentKind::Group {
                    issues.push(Issue::new(
                        format!("{path}.children[{i}]"),
                        "tabs of a tabbed-pane must be groups",
                    ));
                }
            }
        }
        ComponentKind::ChoiceList | ComponentKind::RadioButtons => {
            if c.options.is_empty() {
                issues.push(Issue::new(
                    format!("{path}.options"),
                    format!("{kind} needs at least one option"),
                ));
            }
            let mut seen = BTreeSet::new();
            for (i, o) in c.options.iter().enumerate() {
                if !seen.insert(o) {
                    issues.push(Issue::new(
                        format!("{path}.options[{i}]"),
                        format!("duplicate option `{o}`"),
                    ));
                }
            }
        }
        ComponentKind::InputField if c.value_type.is_none() => {
            issues.push(Issue::new(
                format!("{path}.type"),
                "input-field needs a `type` (number, text or bool)",
            ));
        }
        ComponentKind::OutputDisplay if c.output.is_none() => {
            issues.push(Issue::new(
                format!("{path}.output"),
                "output-display needs an `output` id",
            ));
        }
        _ => {}
    }

    for (i, v) in c.validators.iter().enumerate() {
        let vpath = format!("{path}.validators[{i}]");
        match v {
            Validator::Required => {}
            Validator::NumberRange { min, max } => {
                if c.input_type() != Some(ValueType::Number) {
                    issues.push(Issue::new(
                        vpath.clone(),
                        "number-range applies only to number fields",
                    ));
                }
                match (min, max) {
                    (None, None) => {
                        issues.push(Issue::new(vpath, "number-range needs `min` or `max`"))
                    }
                    (Some(lo), Some(hi)) if lo > hi => {
                        issues.push(Issue::new(vpath, "`min` exceeds `max`"))
                    }
                    _ => {}
                }
            }
            Validator::Pattern { regex } => {
                if let Err(e) = Pattern::compile(regex) {
                    issues.push(Issue::new(
                        format!("{vpath}.regex"),
                        format!("invalid pattern: {e}"),
                    ));
                }
            }
            Validator::OneOf { options } => {
                if options.is_empty() {
                    issues.push(Issue::new(
                        format!("{vpath}.options"),
                        "one-of needs at least one option",
                    ));
                }
            }
        }
    }
}
