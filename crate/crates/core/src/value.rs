//! Scalar cell values and the spreadsheet error codes.

use alloc::string::{String, ToString};
use core::fmt;

use serde::de::{self, Deserialize, Deserializer, MapAccess, Visitor};
use serde::ser::{Serialize, SerializeMap, Serializer};

/// Error values a cell can hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorCode {
    DivZero,
    Value,
    Ref,
    Name,
    NotAvailable,
    Cycle,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::DivZero,
        ErrorCode::Value,
        ErrorCode::Ref,
        ErrorCode::Name,
        ErrorCode::NotAvailable,
        ErrorCode::Cycle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::DivZero => "#DIV/0!",
            ErrorCode::Value => "#VALUE!",
            ErrorCode::Ref => "#REF!",
            ErrorCode::Name => "#NAME?",
            ErrorCode::NotAvailable => "#N/A",
            ErrorCode::Cycle => "#CYCLE!",
        }
    }

    pub fn parse(token: &str) -> Option<ErrorCode> {
        ErrorCode::ALL
            .into_iter()
            .find(|code| code.as_str().eq_ignore_ascii_case(token))
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The unit of computation: what a cell evaluates to.
///
/// `Number` is always finite. Use [`CellValue::number`] to build one from an
/// arbitrary float; non-finite inputs become `#VALUE!`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CellValue {
    Number(f64),
    Text(String),
    Bool(bool),
    #[default]
    Blank,
    Error(ErrorCode),
}

impl CellValue {
    pub fn number(x: f64) -> CellValue {
        if x.is_finite() {
            // -0.0 and 0.0 are the same spreadsheet value
            CellValue::Number(if x == 0.0 { 0.0 } else { x })
        } else {
            CellValue::Error(ErrorCode::Value)
        }
    }

    pub fn text(s: impl Into<String>) -> CellValue {
        CellValue::Text(s.into())
    }

    pub fn is_error(&self) -> bool {
        matches!(self, CellValue::Error(_))
    }

    pub fn is_blank(&self) -> bool {
        matches!(self, CellValue::Blank)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            CellValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn error(&self) -> Option<ErrorCode> {
        match self {
            CellValue::Error(e) => Some(*e),
            _ => None,
        }
    }

    /// Bit-level equality: numbers compare by their IEEE-754 bit pattern.
    pub fn bit_eq(&self, other: &CellValue) -> bool {
        match (self, other) {
            (CellValue::Number(a), CellValue::Number(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }

    /// Text rendering used by `&`, CONCATENATE and report placeholders.
    pub fn display_text(&self) -> String {
        match self {
            CellValue::Number(n) => format_number(*n),
            CellValue::Text(s) => s.clone(),
            CellValue::Bool(true) => "TRUE".to_string(),
            CellValue::Bool(false) => "FALSE".to_string(),
            CellValue::Blank => String::new(),
            CellValue::Error(e) => e.as_str().to_string(),
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_text())
    }
}

impl From<f64> for CellValue {
    fn from(x: f64) -> Self {
        CellValue::number(x)
    }
}

impl From<bool> for CellValue {
    fn from(b: bool) -> Self {
        CellValue::Bool(b)
    }
}

impl From<&str> for CellValue {
    fn from(s: &str) -> Self {
        CellValue::Text(s.to_string())
    }
}

impl From<ErrorCode> for CellValue {
    fn from(e: ErrorCode) -> Self {
        CellValue::Error(e)
    }
}

// JSON shape: number, string, bool, null for blank, {"error": "#N/A"}.
impl Serialize for CellValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            CellValue::Number(n) => s.serialize_f64(*n),
            CellValue::Text(t) => s.serialize_str(t),
            CellValue::Bool(b) => s.serialize_bool(*b),
            CellValue::Blank => s.serialize_unit(),
            CellValue::Error(e) => {
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry("error", e.as_str())?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for CellValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(CellValueVisitor)
    }
}

struct CellValueVisitor;

impl<'de> Visitor<'de> for CellValueVisitor {
    type Value = CellValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a number, string, boolean, null or {\"error\": code}")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<CellValue, E> {
        if v.is_finite() {
            Ok(CellValue::number(v))
        } else {
            Err(E::custom("numbers must be finite"))
        }
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<CellValue, E> {
        Ok(CellValue::number(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<CellValue, E> {
        Ok(CellValue::number(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<CellValue, E> {
        Ok(CellValue::Text(v.to_string()))
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<CellValue, E> {
        Ok(CellValue::Bool(v))
    }

    fn visit_unit<E: de::Error>(self) -> Result<CellValue, E> {
        Ok(CellValue::Blank)
    }

    fn visit_none<E: de::Error>(self) -> Result<CellValue, E> {
        Ok(CellValue::Blank)
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<CellValue, A::Error> {
        let mut code = None;
        while let Some(key) = map.next_key::<String>()? {
            if key != "error" || code.is_some() {
                return Err(de::Error::custom("expected a single `error` key"));
            }
            let text: String = map.next_value()?;
            code = Some(
                ErrorCode::parse(&text).ok_or_else(|| de::Error::custom("unknown error code"))?,
            );
        }
        code.map(CellValue::Error)
            .ok_or_else(|| de::Error::custom("missing `error` key"))
    }
}

/// Shortest decimal string that round-trips to the same `f64`, in positional
/// notation (`0.1`, `3`, `1234.5`).
pub fn format_number(n: f64) -> String {
    if n == 0.0 {
        return "0".to_string();
    }
    alloc::format!("{n}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_codes_round_trip_through_text() {
        for code in ErrorCode::ALL {
            assert_eq!(ErrorCode::parse(code.as_str()), Some(code));
        }
        assert_eq!(ErrorCode::parse("#n/a"), Some(ErrorCode::NotAvailable));
        assert_eq!(ErrorCode::parse("#NUM!"), None);
    }

    #[test]
    fn non_finite_numbers_become_value_errors() {
        assert_eq!(
            CellValue::number(f64::NAN),
            CellValue::Error(ErrorCode::Value)
        );
        assert_eq!(
            CellValue::number(f64::INFINITY),
            CellValue::Error(ErrorCode::Value)
        );
        assert!(CellValue::number(-0.0).bit_eq(&CellValue::Number(0.0)));
    }

    #[test]
    fn numbers_format_shortest() {
        assert_eq!(format_number(3.0), "3");
        assert_eq!(format_number(0.1 + 0.2), "0.30000000000000004");
        assert_eq!(format_number(-2.5), "-2.5");
        assert_eq!(format_number(1e21), "1000000000000000000000");
        assert_eq!(format_number(-0.0), "0");
    }

    #[test]
    fn json_shape() {
        let vals = [
            CellValue::Number(2.5),
            CellValue::text("x"),
            CellValue::Bool(true),
            CellValue::Blank,
            CellValue::Error(ErrorCode::DivZero),
        ];
        let json = serde_json::to_string(&vals).unwrap();
        assert_eq!(json, r##"[2.5,"x",true,null,{"error":"#DIV/0!"}]"##);
        let back: std::vec::Vec<CellValue> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vals);
        assert_eq!(
            serde_json::from_str::<CellValue>("3").unwrap(),
            CellValue::Number(3.0)
        );
        assert!(serde_json::from_str::<CellValue>(r##"{"error":"#NUM!"}"##).is_err());
    }
}
