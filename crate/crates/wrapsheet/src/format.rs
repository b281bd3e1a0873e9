//! Workbook and definition files.
//!
//! Workbook document:
//! `{"sheets":[{"name":..,"cells":{"A1":{"v":3},"A2":{"f":"=A1*2"}}}],"names":{"N":"Sheet!A1:B3"}}`.
//! A cell may also be `{"e":"#N/A"}`, an error literal.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;
use wrapsheet_core::address::parse_a1;
use wrapsheet_core::schema::Issue;
use wrapsheet_core::value::format_number;
use wrapsheet_core::{
    AppDefinition, CellValue, CellView, ErrorCode, Pos, SheetId, Workbook, WorkbookError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{location}: {message}")]
pub struct LoadError {
    /// Document path (`sheets[0].cells.B2`) or cell location (`Exposure!B2`).
    pub location: String,
    pub message: String,
}

impl LoadError {
    fn new(location: impl Into<String>, message: impl Into<String>) -> LoadError {
        LoadError {
            location: location.into(),
            message: message.into(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    sheets: Vec<SheetDoc>,
    #[serde(default)]
    names: Entries<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SheetDoc {
    name: String,
    #[serde(default)]
    cells: Entries<CellDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CellDoc {
    v: Option<Value>,
    f: Option<String>,
    e: Option<String>,
}

/// A JSON object read in document order, keeping repeated keys.
struct Entries<T>(Vec<(String, T)>);

impl<T> Default for Entries<T> {
    fn default() -> Self {
        Entries(Vec::new())
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Entries<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<T>(std::marker::PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = Entries<T>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Entries<T>, A::Error> {
                let mut out = Vec::new();
                while let Some(k) = map.next_key::<String>()? {
                    out.push((k, map.next_value()?));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V(std::marker::PhantomData))
    }
}

enum Content {
    Value(CellValue),
    Formula(String),
}

fn cell_content(c: CellDoc) -> Result<Content, String> {
    match (c.v, c.f, c.e) {
        (Some(v), None, None) => match v {
            Value::Number(n) => match n.as_f64() {
                Some(x) if x.is_finite() => Ok(Content::Value(CellValue::number(x))),
                _ => Err("number out of range".into()),
            },
            Value::String(s) => Ok(Content::Value(CellValue::Text(s))),
            Value::Bool(b) => Ok(Content::Value(CellValue::Bool(b))),
            _ => Err("`v` must be a number, string or boolean".into()),
        },
        (None, Some(f), None) => Ok(Content::Formula(f)),
        (None, None, Some(e)) => ErrorCode::parse(&e)
            .map(|code| Content::Value(CellValue::Error(code)))
            .ok_or_else(|| format!("unknown error code `{e}`")),
        _ => Err("a cell needs exactly one of `v`, `f` or `e`".into()),
    }
}

/// Parses a workbook document. Formula values are left blank; call
/// `full_recalculate` before reading them.
pub fn load_workbook(text: &str) -> Result<Workbook, LoadError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Doc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        LoadError::new(
            if path == "." {
                "document".to_string()
            } else {
                path
            },
            e.into_inner().to_string(),
        )
    })?;

    let mut b = Workbook::builder();
    for (i, sheet) in doc.sheets.into_iter().enumerate() {
        let at = format!("sheets[{i}]");
        let id = b
            .add_sheet(&sheet.name)
            .map_err(|e| LoadError::new(format!("{at}.name"), e.to_string()))?;
        let mut seen: BTreeMap<Pos, String> = BTreeMap::new();
        for (key, cell) in sheet.cells.0 {
            let here = format!("{}!{}", sheet.name, key);
            let pos = parse_a1(&key).map_err(|e| LoadError::new(&here, e.to_string()))?;
            if let Some(first) = seen.insert(pos, key.clone()) {
                return Err(LoadError::new(
                    &here,
                    format!("cell given twice (also as `{first}`)"),
                ));
            }
            match cell_content(cell).map_err(|m| LoadError::new(&here, m))? {
                Content::Value(v) => {
                    b.literal(id, pos, v).map_err(builder_error)?;
                }
                Content::Formula(f) => {
                    b.formula(id, pos, &f).map_err(builder_error)?;
                }
            }
        }
    }
    let mut seen_names = BTreeMap::new();
    for (name, target) in &doc.names.0 {
        if seen_names.insert(name.to_uppercase(), ()).is_some() {
            return Err(LoadError::new(
                format!("names.{name}"),
                "defined more than once",
            ));
        }
        b.name(name, target);
    }
    let wb = b.build().map_err(builder_error)?;

    for sheet in 0..wb.sheet_count() {
        let sheet = SheetId(sheet as u32);
        for at in wb.formula_cells().filter(|c| c.sheet == sheet) {
            if let Some(Err(e)) = wb.formula(at) {
                return Err(LoadError::new(wb.format_ref(at), e.to_string()));
            }
        }
    }
    Ok(wb)
}

fn builder_error(e: WorkbookError) -> LoadError {
    match e {
        WorkbookError::Cell { location, message } => LoadError::new(location, message),
        WorkbookError::Name { name, message } => LoadError::new(format!("names.{name}"), message),
        other => LoadError::new("sheets", other.to_string()),
    }
}

/// Canonical document: sheets in order, one cell per line in column-major
/// order, names sorted. Formula cells are written as their source.
pub fn serialize_workbook(wb: &Workbook) -> String {
    let mut out = String::from("{\n  \"sheets\": [");
    for s in 0..wb.sheet_count() {
        let sheet = SheetId(s as u32);
        out.push_str(if s == 0 { "\n" } else { ",\n" });
        let name = wb.sheet_name(sheet).unwrap_or_default();
        let _ = write!(
            out,
            "    {{\n      \"name\": {},\n      \"cells\": {{",
            json_str(name)
        );
        let mut first = true;
        for (pos, cell) in wb.cells(sheet) {
            out.push_str(if first { "\n" } else { ",\n" });
            first = false;
            let body = match cell {
                CellView::Formula { source, .. } => format!("{{\"f\": {}}}", json_str(source)),
                CellView::Literal(v) => literal_json(v),
            };
            let _ = write!(out, "        \"{pos}\": {body}");
        }
        out.push_str(if first {
            "}\n    }"
        } else {
            "\n      }\n    }"
        });
    }
    out.push_str(if wb.sheet_count() == 0 {
        "],\n"
    } else {
        "\n  ],\n"
    });

    let mut names: Vec<(&str, String)> = wb
        .names()
        .iter()
        .map(|(n, r)| (n, wb.format_range(r)))
        .collect();
    names.sort();
    if names.is_empty() {
        out.push_str("  \"names\": {}\n}\n");
    } else {
        out.push_str("  \"names\": {\n");
        let lines: Vec<String> = names
            .iter()
            .map(|(n, t)| format!("    {}: {}", json_str(n), json_str(t)))
            .collect();
        out.push_str(&lines.join(",\n"));
        out.push_str("\n  }\n}\n");
    }
    out
}

fn literal_json(v: &CellValue) -> String {
    match v {
        CellValue::Number(n) => format!("{{\"v\": {}}}", number_json(*n)),
        CellValue::Text(s) => format!("{{\"v\": {}}}", json_str(s)),
        CellValue::Bool(b) => format!("{{\"v\": {b}}}"),
        CellValue::Error(e) => format!("{{\"e\": {}}}", json_str(e.as_str())),
        // blank cells are never stored
        CellValue::Blank => "{\"v\": \"\"}".to_string(),
    }
}

/// Shortest text that reads back as the same `f64`; integers carry no `.0`.
fn number_json(n: f64) -> String {
    let text = format_number(n);
    if text.parse::<f64>().ok() == Some(n) {
        text
    } else {
        serde_json::to_string(&n).expect("finite number")
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DefinitionError {
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("{}", join_issues(.0))]
    Invalid(Vec<Issue>),
}

fn join_issues(issues: &[Issue]) -> String {
    issues
        .iter()
        .map(Issue::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

impl DefinitionError {
    /// The problems as document-path issues.
    pub fn issues(&self) -> Vec<Issue> {
        match self {
            DefinitionError::Syntax { path, message } => {
                vec![Issue::new(path.clone(), message.clone())]
            }
            DefinitionError::Invalid(issues) => issues.clone(),
        }
    }
}

/// Parses a definition document and runs the workbook-independent checks.
pub fn parse_definition(text: &str) -> Result<AppDefinition, DefinitionError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let def: AppDefinition = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        DefinitionError::Syntax {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    let issues = def.check();
    if issues.is_empty() {
        Ok(def)
    } else {
        Err(DefinitionError::Invalid(issues))
    }
}

/// Canonical definition document.
pub fn serialize_definition(def: &AppDefinition) -> String {
    let mut text = serde_json::to_string_pretty(def).expect("definition serializes");
    text.push('\n');
    text
}
