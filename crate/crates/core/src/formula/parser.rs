//! Recursive-descent parser for the formula language.
//!
//! Precedence, loosest first: comparisons, `&`, `+ -`, `* /`, `^`, prefix
//! `- +`. All binary operators are left-associative. Prefix minus binds
//! tighter than `^`, so `-2^2` is `(-2)^2 = 4`, as in mainstream spreadsheets.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::lexer::{tokenize, Tok, Token};
use crate::address::{self, CellRef, RangeRef, SheetId};
use crate::value::ErrorCode;
use crate::workbook::NameTable;

const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the formula source (the leading `=` is offset 0).
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(offset: usize, message: &str) -> ParseError {
        ParseError {
            offset,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at offset {}: {}",
            self.offset, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Plus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Concat,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Function {
    Sum,
    Average,
    Min,
    Max,
    Count,
    CountIf,
    SumIf,
    If,
    And,
    Or,
    Not,
    Round,
    Abs,
    Sqrt,
    Concatenate,
    VLookup,
    Index,
    Match,
    /// Parses fine, evaluates to `#NAME?`.
    Unknown(String),
}

impl Function {
    pub fn from_name(upper: &str) -> Function {
        match upper {
            "SUM" => Function::Sum,
            "AVERAGE" => Function::Average,
            "MIN" => Function::Min,
            "MAX" => Function::Max,
            "COUNT" => Function::Count,
            "COUNTIF" => Function::CountIf,
            "SUMIF" => Function::SumIf,
            "IF" => Function::If,
            "AND" => Function::And,
            "OR" => Function::Or,
            "NOT" => Function::Not,
            "ROUND" => Function::Round,
            "ABS" => Function::Abs,
            "SQRT" => Function::Sqrt,
            "CONCATENATE" => Function::Concatenate,
            "VLOOKUP" => Function::VLookup,
            "INDEX" => Function::Index,
            "MATCH" => Function::Match,
            other => Function::Unknown(other.to_string()),
        }
    }
}

/// Parsed formula. References carry the sheet they resolve to.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Error(ErrorCode),
    Cell(CellRef),
    Range(RangeRef),
    /// Reference to a sheet the workbook does not have; evaluates to `#REF!`.
    BadRef(String),
    /// Identifier that is neither a function nor a defined name; `#NAME?`.
    UnknownName(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(Function, Vec<Expr>),
}

/// A reference read by an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefItem {
    Cell(CellRef),
    Range(RangeRef),
}

impl Expr {
    /// Visits every cell or range reference, including both branches of
    /// `IF`: dependence is static.
    pub fn for_each_ref(&self, f: &mut impl FnMut(RefItem)) {
        match self {
            Expr::Cell(c) => f(RefItem::Cell(*c)),
            Expr::Range(r) => f(RefItem::Range(*r)),
            Expr::Unary(_, e) => e.for_each_ref(f),
            Expr::Binary(_, a, b) => {
                a.for_each_ref(f);
                b.for_each_ref(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.for_each_ref(f)),
            Expr::Number(_)
            | Expr::Text(_)
            | Expr::Bool(_)
            | Expr::Error(_)
            | Expr::BadRef(_)
            | Expr::UnknownName(_) => {}
        }
    }
}

/// Every cell an evaluation of `expr` may read, ranges fully expanded.
pub fn extract_dependencies(expr: &Expr) -> BTreeSet<CellRef> {
    let mut out = BTreeSet::new();
    expr.for_each_ref(&mut |item| match item {
        RefItem::Cell(c) => {
            out.insert(c);
        }
        RefItem::Range(r) => out.extend(r.cells()),
    });
    out
}

/// Sheets and names visible to a formula.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    pub sheets: &'a [String],
    pub names: &'a NameTable,
}

impl Scope<'_> {
    fn sheet(&self, name: &str) -> Option<SheetId> {
        let upper = name.to_uppercase();
        self.sheets
            .iter()
            .position(|s| s.to_uppercase() == upper)
            .map(|i| SheetId(i as u32))
    }
}

/// True for identifiers usable as range names: not a cell reference, not a
/// boolean literal.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        && address::parse_a1(name).is_err()
        && !name.eq_ignore_ascii_case("TRUE")
        && !name.eq_ignore_ascii_case("FALSE")
}

/// Parses formula `source` (which must start with `=`) for a cell on sheet
/// `host`.
pub fn parse_formula(source: &str, host: SheetId, scope: &Scope<'_>) -> Result<Expr, ParseError> {
    let body = source
        .strip_prefix('=')
        .ok_or_else(|| ParseError::new(0, "formula must begin with `=`"))?;
    let tokens = tokenize(body, 1)?;
    if tokens.is_empty() {
        return Err(ParseError::new(source.len(), "empty formula"));
    }
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
        end: source.len(),
        host,
        scope,
        depth: 0,
    };
    let expr = p.comparison()?;
    if let Some(t) = p.peek_token() {
        return Err(ParseError::new(t.offset, "unexpected token"));
    }
    Ok(expr)
}

struct Parser<'t, 's> {
    tokens: &'t [Token],
    pos: usize,
    end: usize,
    host: SheetId,
    scope: &'s Scope<'s>,
    depth: usize,
}

impl Parser<'_, '_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_token(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek_token().map(|t| t.offset).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::new(self.offset(), what))
        }
    }

    fn binary_level(
        &mut self,
        ops: &[(Tok, BinaryOp)],
        next: fn(&mut Self) -> Result<Expr, ParseError>,
    ) -> Result<Expr, ParseError> {
        let mut lhs = next(self)?;
        while let Some(op) = self
            .peek()
            .and_then(|t| ops.iter().find(|(tok, _)| tok == t).map(|(_, op)| *op))
        {
            self.pos += 1;
            let rhs = next(self)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::new(self.offset(), "formula nested too deeply"));
        }
        let out = self.binary_level(
            &[
                (Tok::Eq, BinaryOp::Eq),
                (Tok::Ne, BinaryOp::Ne),
                (Tok::Lt, BinaryOp::Lt),
                (Tok::Le, BinaryOp::Le),
                (Tok::Gt, BinaryOp::Gt),
                (Tok::Ge, BinaryOp::Ge),
            ],
            Self::concat,
        );
        self.depth -= 1;
        out
    }

    fn concat(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[(Tok::Amp, BinaryOp::Concat)], Self::additive)
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[(Tok::Plus, BinaryOp::Add), (Tok::Minus, BinaryOp::Sub)],
            Self::multiplicative,
        )
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(
            &[(Tok::Star, BinaryOp::Mul), (Tok::Slash, BinaryOp::Div)],
            Self::power,
        )
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        self.binary_level(&[(Tok::Caret, BinaryOp::Pow)], Self::unary)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let op = match self.peek() {
            Some(Tok::Minus) => UnaryOp::Neg,
            Some(Tok::Plus) => UnaryOp::Plus,
            _ => return self.primary(),
        };
        self.pos += 1;
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::new(self.offset(), "formula nested too deeply"));
        }
        let inner = self.unary();
        self.depth -= 1;
        Ok(Expr::Unary(op, Box::new(inner?)))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.next() {
            Some(Tok::Number(n)) => Ok(Expr::Number(n)),
            Some(Tok::Str(s)) => Ok(Expr::Text(s)),
            Some(Tok::Error(e)) => Ok(Expr::Error(e)),
            Some(Tok::LParen) => {
                let inner = self.comparison()?;
                self.expect(Tok::RParen, "expected `)`")?;
                Ok(inner)
            }
            Some(Tok::QuotedSheet(sheet)) => {
                self.expect(Tok::Bang, "expected `!` after sheet name")?;
                self.qualified_ref(&sheet)
            }
            Some(Tok::Word(word)) => self.word(word, offset),
            Some(_) => Err(ParseError::new(offset, "unexpected token")),
            None => Err(ParseError::new(offset, "unexpected end of formula")),
        }
    }

    fn word(&mut self, word: String, offset: usize) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                if word.contains('$') {
                    return Err(ParseError::new(offset, "invalid function name"));
                }
                self.pos += 1;
                let func = Function::from_name(&word.to_uppercase());
                let args = self.arguments()?;
                return Ok(Expr::Call(func, args));
            }
            Some(Tok::Bang) => {
                self.pos += 1;
                return self.qualified_ref(&word);
            }
            _ => {}
        }
        if word.eq_ignore_ascii_case("TRUE") {
            return Ok(Expr::Bool(true));
        }
        if word.eq_ignore_ascii_case("FALSE") {
            return Ok(Expr::Bool(false));
        }
        if let Ok(pos) = address::parse_a1(&word) {
            return self.area(Some(self.host), CellRef::new(self.host, pos), "");
        }
        if word.contains('$') || !is_valid_name(&word) {
            return Err(ParseError::new(offset, "invalid reference"));
        }
        Ok(match self.scope.names.get(&word) {
            Some(range) if range.start == range.end => {
                Expr::Cell(CellRef::new(range.sheet, range.start))
            }
            Some(range) => Expr::Range(range),
            None => Expr::UnknownName(word),
        })
    }

    fn qualified_ref(&mut self, sheet_name: &str) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(Tok::Word(word)) = self.next() else {
            return Err(ParseError::new(offset, "expected cell reference after `!`"));
        };
        let pos = address::parse_a1(&word)
            .map_err(|_| ParseError::new(offset, "invalid cell reference"))?;
        let sheet = self.scope.sheet(sheet_name);
        // placeholder sheet id for a missing sheet; the node becomes BadRef
        let cell = CellRef::new(sheet.unwrap_or(SheetId(u32::MAX)), pos);
        self.area(sheet, cell, sheet_name)
    }

    /// Finishes a reference, consuming an optional `:B3` range tail.
    fn area(
        &mut self,
        sheet: Option<SheetId>,
        first: CellRef,
        sheet_name: &str,
    ) -> Result<Expr, ParseError> {
        let mut range = None;
        if self.peek() == Some(&Tok::Colon) {
            self.pos += 1;
            let offset = self.offset();
            let second = match self.next() {
                Some(Tok::Word(w)) => address::parse_a1(&w).ok(),
                _ => None,
            }
            .ok_or_else(|| ParseError::new(offset, "expected cell reference after `:`"))?;
            range = Some(RangeRef::new(first.sheet, first.pos(), second));
        }
        if sheet.is_none() {
            return Ok(Expr::BadRef(sheet_name.to_string()));
        }
        Ok(match range {
            Some(r) => Expr::Range(r),
            None => Expr::Cell(first),
        })
    }

    fn arguments(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            return Ok(args);
        }
        loop {
            args.push(self.comparison()?);
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RParen) => return Ok(args),
                Some(_) => {
                    let offset = self.tokens[self.pos - 1].offset;
                    return Err(ParseError::new(offset, "expected `,` or `)`"));
                }
                None => return Err(ParseError::new(self.end, "expected `,` or `)`")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::address::Pos;
    use crate::workbook::Workbook;
    use alloc::vec;

    fn wb() -> Workbook {
        let mut b = Workbook::builder();
        b.add_sheet("Sheet1").unwrap();
        b.add_sheet("Exposure").unwrap();
        b.name("EXPOSURE", "Exposure!B2:B13");
        b.name("Rate", "Sheet1!C1");
        b.build().unwrap()
    }

    fn parse(src: &str) -> Result<Expr, ParseError> {
        wb().parse_formula(src, SheetId(0))
    }

    fn cell(sheet: u32, a1: &str) -> CellRef {
        CellRef::new(SheetId(sheet), Pos::parse(a1).unwrap())
    }

    fn num(n: f64) -> Box<Expr> {
        Box::new(Expr::Number(n))
    }

    #[test]
    fn multiplication_binds_tighter_than_addition() {
        assert_eq!(
            parse("=1+2*3").unwrap(),
            Expr::Binary(
                BinaryOp::Add,
                num(1.0),
                Box::new(Expr::Binary(BinaryOp::Mul, num(2.0), num(3.0)))
            )
        );
    }

    #[test]
    fn prefix_minus_binds_tighter_than_power() {
        assert_eq!(
            parse("=-2^2").unwrap(),
            Expr::Binary(
                BinaryOp::Pow,
                Box::new(Expr::Unary(UnaryOp::Neg, num(2.0))),
                num(2.0)
            )
        );
        assert_eq!(
            parse("=2^-1").unwrap(),
            Expr::Binary(
                BinaryOp::Pow,
                num(2.0),
                Box::new(Expr::Unary(UnaryOp::Neg, num(1.0)))
            )
        );
    }

    #[test]
    fn concat_sits_between_additive_and_comparison() {
        let e = parse("=1+1&\"x\"=\"2x\"").unwrap();
        let Expr::Binary(BinaryOp::Eq, lhs, _) = e else {
            panic!("{e:?}")
        };
        assert!(matches!(*lhs, Expr::Binary(BinaryOp::Concat, _, _)));
    }

    #[test]
    fn named_ranges_are_substituted() {
        let e = parse("=SUM(EXPOSURE)").unwrap();
        assert_eq!(
            e,
            Expr::Call(
                Function::Sum,
                vec![Expr::Range(RangeRef::new(
                    SheetId(1),
                    Pos::parse("B2").unwrap(),
                    Pos::parse("B13").unwrap()
                ))]
            )
        );
        assert_eq!(
            parse("=rate*2").unwrap(),
            Expr::Binary(BinaryOp::Mul, Box::new(Expr::Cell(cell(0, "C1"))), num(2.0))
        );
    }

    #[test]
    fn refs_resolve_sheets_and_ranges() {
        assert_eq!(parse("=exposure!$B$3").unwrap(), Expr::Cell(cell(1, "B3")));
        assert_eq!(
            parse("='Exposure'!C3:A1").unwrap(),
            Expr::Range(RangeRef::new(
                SheetId(1),
                Pos::parse("A1").unwrap(),
                Pos::parse("C3").unwrap()
            ))
        );
        assert_eq!(parse("=Ghost!A1").unwrap(), Expr::BadRef("Ghost".into()));
    }

    #[test]
    fn unknown_functions_and_names_parse() {
        assert_eq!(
            parse("=foo(1)").unwrap(),
            Expr::Call(Function::Unknown("FOO".into()), vec![Expr::Number(1.0)])
        );
        assert_eq!(
            parse("=nothing").unwrap(),
            Expr::UnknownName("nothing".into())
        );
        assert_eq!(parse("=sum()").unwrap(), Expr::Call(Function::Sum, vec![]));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!(parse("=1+").unwrap_err().offset, 3);
        assert_eq!(parse("=(1").unwrap_err().offset, 3);
        assert_eq!(parse("=1 2").unwrap_err().offset, 3);
        assert_eq!(parse("=SUM(1,,2)").unwrap_err().offset, 7);
        assert_eq!(parse("=").unwrap_err().offset, 1);
        assert_eq!(parse("1+1").unwrap_err().offset, 0);
        assert!(parse("=A1:").is_err());
        assert!(parse("=$foo").is_err());
    }

    #[test]
    fn deep_nesting_is_rejected_not_overflowed() {
        let mut src = String::from("=");
        for _ in 0..5000 {
            src.push('(');
        }
        assert!(parse(&src).is_err());
        let mut neg = String::from("=");
        for _ in 0..5000 {
            neg.push('-');
        }
        neg.push('1');
        assert!(parse(&neg).is_err());
    }

    #[test]
    fn dependencies_are_a_set_including_both_if_branches() {
        let deps = |src: &str| extract_dependencies(&parse(src).unwrap());
        assert_eq!(
            deps("=A1+B2"),
            [cell(0, "A1"), cell(0, "B2")].into_iter().collect()
        );
        assert_eq!(
            deps("=IF(A1>0, B1, C1)"),
            [cell(0, "A1"), cell(0, "B1"), cell(0, "C1")]
                .into_iter()
                .collect()
        );
        assert_eq!(
            deps("=SUM(A1:A3)+A2"),
            [cell(0, "A1"), cell(0, "A2"), cell(0, "A3")]
                .into_iter()
                .collect()
        );
    }
}
