//! Turning raw form values into typed cell edits.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::definition::{AppDefinition, Component, Validator, ValueType};
use super::pattern::Pattern;
use crate::formula::parse_decimal;
use crate::value::{format_number, CellValue};

/// A value as submitted by a client: the JSON scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Null,
    Bool(bool),
    Number(f64),
    Text(String),
}

impl RawValue {
    fn as_text(&self) -> String {
        match self {
            RawValue::Null => String::new(),
            RawValue::Bool(b) => b.to_string(),
            RawValue::Number(n) => format_number(*n),
            RawValue::Text(t) => t.clone(),
        }
    }
}

impl From<&str> for RawValue {
    fn from(s: &str) -> Self {
        RawValue::Text(s.to_string())
    }
}

impl From<f64> for RawValue {
    fn from(n: f64) -> Self {
        RawValue::Number(n)
    }
}

/// A validated value for one bound input component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEdit {
    pub component: String,
    pub value: CellValue,
}

/// Per-field error messages keyed by component id.
pub type FieldErrors = BTreeMap<String, String>;

/// Validates raw inputs for every input component of `def`.
///
/// On success there is one edit per bound input, in component-id order.
/// Absent fields and empty strings mean "leave blank" unless the field is
/// required.
pub fn validate_inputs(
    def: &AppDefinition,
    inputs: &BTreeMap<String, RawValue>,
) -> Result<Vec<TypedEdit>, FieldErrors> {
    let mut errors = FieldErrors::new();
    for id in inputs.keys() {
        match def.ui.find(id) {
            None => {
                errors.insert(id.clone(), "unknown field".to_string());
            }
            Some(c) if !c.kind.is_input() => {
                errors.insert(id.clone(), "not an input field".to_string());
            }
            Some(_) => {}
        }
    }

    let mut edits = Vec::new();
    let mut components = Vec::new();
    def.ui.walk("", &mut |_, c| {
        if c.kind.is_input() && def.bindings.inputs.contains_key(&c.id) {
            components.push(c);
        }
    });
    components.sort_by(|a, b| a.id.cmp(&b.id));
    for c in components {
        match check_field(c, inputs.get(&c.id).unwrap_or(&RawValue::Null)) {
            Ok(value) => edits.push(TypedEdit {
                component: c.id.clone(),
                value,
            }),
            Err(msg) => {
                errors.insert(c.id.clone(), msg);
            }
        }
    }
    if errors.is_empty() {
        Ok(edits)
    } else {
        Err(errors)
    }
}

fn check_field(c: &Component, raw: &RawValue) -> Result<CellValue, String> {
    let value = coerce(c, raw)?;
    if value.is_blank() {
        return if c.is_required() {
            Err("required".to_string())
        } else {
            Ok(value)
        };
    }
    let shown = match raw {
        RawValue::Text(t) => t.trim().to_string(),
        other => other.as_text(),
    };
    for v in &c.validators {
        match v {
            Validator::Required => {}
            Validator::NumberRange { min, max } => {
                let n = value.as_number().unwrap_or(0.0);
                if let Some(lo) = min {
                    if n < *lo {
                        return Err(format!("below minimum {}", format_number(*lo)));
                    }
                }
                if let Some(hi) = max {
                    if n > *hi {
                        return Err(format!("above maximum {}", format_number(*hi)));
                    }
                }
            }
            Validator::Pattern { regex } => {
                let ok = Pattern::compile(regex)
                    .map(|p| p.is_full_match(&shown))
                    .unwrap_or(false);
                if !ok {
                    return Err(format!("does not match pattern {regex}"));
                }
            }
            Validator::OneOf { options } => {
                if !options.iter().any(|o| *o == value.display_text()) {
                    return Err("not one of the allowed values".to_string());
                }
            }
        }
    }
    Ok(value)
}

fn coerce(c: &Component, raw: &RawValue) -> Result<CellValue, String> {
    let text = match raw {
        RawValue::Null => return Ok(CellValue::Blank),
        RawValue::Text(t) if t.trim().is_empty() => return Ok(CellValue::Blank),
        RawValue::Text(t) => Some(t.trim()),
        _ => None,
    };
    match c.input_type() {
        Some(ValueType::Number) => match (raw, text) {
            (RawValue::Number(n), _) if n.is_finite() => Ok(CellValue::number(*n)),
            (_, Some(t)) => parse_decimal(t)
                .map(CellValue::number)
                .ok_or_else(|| "not a number".to_string()),
            _ => Err("expected a number".to_string()),
        },
        Some(ValueType::Bool) => match (raw, text) {
            (RawValue::Bool(b), _) => Ok(CellValue::Bool(*b)),
            (_, Some(t)) if t.eq_ignore_ascii_case("true") => Ok(CellValue::Bool(true)),
            (_, Some(t)) if t.eq_ignore_ascii_case("false") => Ok(CellValue::Bool(false)),
            _ => Err("expected true or false".to_string()),
        },
        Some(ValueType::Text) | None => {
            let s = match raw {
                RawValue::Bool(_) => return Err("expected text".to_string()),
                RawValue::Text(t) => t.clone(),
                other => other.as_text(),
            };
            if !c.options.is_empty() && !c.options.contains(&s) {
                return Err("not one of the options".to_string());
            }
            Ok(CellValue::Text(s))
        }
    }
}
