//! Formula evaluation.
//!
//! Evaluation is total: every failure is an error value, never a panic or an
//! `Err`. Coercions are deliberately narrow. Blank is 0 and booleans are 1/0
//! in arithmetic, but text is never converted to a number.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::parser::{BinaryOp, Expr, Function, UnaryOp};
use crate::address::{CellRef, RangeRef, SheetId};
use crate::value::{CellValue, ErrorCode};

/// Read-only access to the values of already-computed cells.
pub trait ValueView {
    fn value(&self, cell: CellRef) -> &CellValue;
    fn has_sheet(&self, sheet: SheetId) -> bool;
}

/// Evaluates `expr` to the value its cell should hold. A bare range result
/// is `#VALUE!` (no array formulas) and a blank result reads as `0`.
pub fn evaluate(expr: &Expr, view: &dyn ValueView) -> CellValue {
    match (Evaluator { view }).eval(expr) {
        Operand::Range(_) => CellValue::Error(ErrorCode::Value),
        Operand::Value(CellValue::Blank) => CellValue::Number(0.0),
        Operand::Value(v) => v,
    }
}

enum Operand {
    Value(CellValue),
    Range(RangeRef),
}

type Eval<T> = Result<T, ErrorCode>;

struct Evaluator<'v> {
    view: &'v dyn ValueView,
}

fn err(code: ErrorCode) -> Operand {
    Operand::Value(CellValue::Error(code))
}

fn to_number(v: &CellValue) -> Eval<f64> {
    match v {
        CellValue::Number(n) => Ok(*n),
        CellValue::Blank => Ok(0.0),
        CellValue::Bool(b) => Ok(if *b { 1.0 } else { 0.0 }),
        CellValue::Text(_) => Err(ErrorCode::Value),
        CellValue::Error(e) => Err(*e),
    }
}

fn to_bool(v: &CellValue) -> Eval<bool> {
    match v {
        CellValue::Bool(b) => Ok(*b),
        CellValue::Number(n) => Ok(*n != 0.0),
        CellValue::Blank => Ok(false),
        CellValue::Text(_) => Err(ErrorCode::Value),
        CellValue::Error(e) => Err(*e),
    }
}

fn to_text(v: &CellValue) -> Eval<String> {
    match v {
        CellValue::Error(e) => Err(*e),
        other => Ok(other.display_text()),
    }
}

fn number_result(x: f64) -> CellValue {
    CellValue::number(x)
}

fn fold_case(s: &str) -> String {
    s.to_lowercase()
}

/// Spreadsheet ordering: numbers < text < booleans; text compares
/// case-insensitively; blank takes the "zero" of whatever it is compared to.
pub(crate) fn compare_values(a: &CellValue, b: &CellValue) -> Ordering {
    fn rank(v: &CellValue) -> u8 {
        match v {
            CellValue::Number(_) | CellValue::Blank => 0,
            CellValue::Text(_) => 1,
            CellValue::Bool(_) => 2,
            CellValue::Error(_) => 3,
        }
    }
    fn zero_like(other: &CellValue) -> CellValue {
        match other {
            CellValue::Text(_) => CellValue::Text(String::new()),
            CellValue::Bool(_) => CellValue::Bool(false),
            _ => CellValue::Number(0.0),
        }
    }
    let (a, b) = match (a, b) {
        (CellValue::Blank, CellValue::Blank) => return Ordering::Equal,
        (CellValue::Blank, other) => (zero_like(other), other.clone()),
        (other, CellValue::Blank) => (other.clone(), zero_like(other)),
        (x, y) => (x.clone(), y.clone()),
    };
    match (&a, &b) {
        (CellValue::Number(x), CellValue::Number(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (CellValue::Text(x), CellValue::Text(y)) => fold_case(x).cmp(&fold_case(y)),
        (CellValue::Bool(x), CellValue::Bool(y)) => x.cmp(y),
        _ => rank(&a).cmp(&rank(&b)),
    }
}

/// Exact-match equality used by VLOOKUP and MATCH.
fn lookup_eq(needle: &CellValue, candidate: &CellValue) -> bool {
    match (needle, candidate) {
        (CellValue::Number(a), CellValue::Number(b)) => a == b,
        (CellValue::Text(a), CellValue::Text(b)) => fold_case(a) == fold_case(b),
        (CellValue::Bool(a), CellValue::Bool(b)) => a == b,
        _ => false,
    }
}

/// An argument as a function sees it: references stay references so
/// aggregate functions can skip text and blanks inside them.
enum Arg {
    Ref(RangeRef),
    Value(CellValue),
}

impl Evaluator<'_> {
    fn cell(&self, c: CellRef) -> CellValue {
        if self.view.has_sheet(c.sheet) {
            self.view.value(c).clone()
        } else {
            CellValue::Error(ErrorCode::Ref)
        }
    }

    fn eval(&self, expr: &Expr) -> Operand {
        match expr {
            Expr::Number(n) => Operand::Value(number_result(*n)),
            Expr::Text(s) => Operand::Value(CellValue::Text(s.clone())),
            Expr::Bool(b) => Operand::Value(CellValue::Bool(*b)),
            Expr::Error(e) => err(*e),
            Expr::Cell(c) => Operand::Value(self.cell(*c)),
            Expr::Range(r) => {
                if self.view.has_sheet(r.sheet) {
                    Operand::Range(*r)
                } else {
                    err(ErrorCode::Ref)
                }
            }
            Expr::BadRef(_) => err(ErrorCode::Ref),
            Expr::UnknownName(_) => err(ErrorCode::Name),
            Expr::Unary(op, inner) => {
                let v = self.scalar(inner);
                Operand::Value(match (op, v) {
                    (_, CellValue::Error(e)) => CellValue::Error(e),
                    (UnaryOp::Plus, v) => v,
                    (UnaryOp::Neg, v) => match to_number(&v) {
                        Ok(n) => number_result(-n),
                        Err(e) => CellValue::Error(e),
                    },
                })
            }
            Expr::Binary(op, a, b) => Operand::Value(self.binary(*op, a, b)),
            Expr::Call(func, args) => self.call(func, args),
        }
    }

    fn scalar(&self, expr: &Expr) -> CellValue {
        match self.eval(expr) {
            Operand::Value(v) => v,
            Operand::Range(_) => CellValue::Error(ErrorCode::Value),
        }
    }

    fn binary(&self, op: BinaryOp, a: &Expr, b: &Expr) -> CellValue {
        let lhs = self.scalar(a);
        let rhs = self.scalar(b);
        if let CellValue::Error(e) = lhs {
            return CellValue::Error(e);
        }
        if let CellValue::Error(e) = rhs {
            return CellValue::Error(e);
        }
        let arith = |f: fn(f64, f64) -> CellValue| match (to_number(&lhs), to_number(&rhs)) {
            (Ok(x), Ok(y)) => f(x, y),
            (Err(e), _) | (_, Err(e)) => CellValue::Error(e),
        };
        match op {
            BinaryOp::Add => arith(|x, y| number_result(x + y)),
            BinaryOp::Sub => arith(|x, y| number_result(x - y)),
            BinaryOp::Mul => arith(|x, y| number_result(x * y)),
            BinaryOp::Div => arith(|x, y| {
                if y == 0.0 {
                    CellValue::Error(ErrorCode::DivZero)
                } else {
                    number_result(x / y)
                }
            }),
            BinaryOp::Pow => arith(|x, y| {
                if x == 0.0 && y < 0.0 {
                    CellValue::Error(ErrorCode::DivZero)
                } else {
                    number_result(libm::pow(x, y))
                }
            }),
            BinaryOp::Concat => {
                let mut s = lhs.display_text();
                s.push_str(&rhs.display_text());
                CellValue::Text(s)
            }
            BinaryOp::Eq => CellValue::Bool(compare_values(&lhs, &rhs) == Ordering::Equal),
            BinaryOp::Ne => CellValue::Bool(compare_values(&lhs, &rhs) != Ordering::Equal),
            BinaryOp::Lt => CellValue::Bool(compare_values(&lhs, &rhs) == Ordering::Less),
            BinaryOp::Le => CellValue::Bool(compare_values(&lhs, &rhs) != Ordering::Greater),
            BinaryOp::Gt => CellValue::Bool(compare_values(&lhs, &rhs) == Ordering::Greater),
            BinaryOp::Ge => CellValue::Bool(compare_values(&lhs, &rhs) != Ordering::Less),
        }
    }

    fn arg(&self, expr: &Expr) -> Arg {
        match expr {
            Expr::Cell(c) if self.view.has_sheet(c.sheet) => Arg::Ref(RangeRef::single(*c)),
            other => match self.eval(other) {
                Operand::Range(r) => Arg::Ref(r),
                Operand::Value(v) => Arg::Value(v),
            },
        }
    }

    fn range_arg(&self, expr: &Expr) -> Eval<RangeRef> {
        match self.arg(expr) {
            Arg::Ref(r) => Ok(r),
            Arg::Value(CellValue::Error(e)) => Err(e),
            Arg::Value(_) => Err(ErrorCode::Value),
        }
    }

    fn number_arg(&self, expr: &Expr) -> Eval<f64> {
        to_number(&self.scalar(expr))
    }

    /// Numeric arguments for SUM/AVERAGE/MIN/MAX. Inside references only
    /// numbers count (errors propagate); direct values are coerced.
    fn numbers(&self, args: &[Expr]) -> Eval<Vec<f64>> {
        let mut out = Vec::new();
        for a in args {
            match self.arg(a) {
                Arg::Ref(r) => {
                    for c in r.cells() {
                        match self.view.value(c) {
                            CellValue::Number(n) => out.push(*n),
                            CellValue::Error(e) => return Err(*e),
                            _ => {}
                        }
                    }
                }
                Arg::Value(v) => out.push(to_number(&v)?),
            }
        }
        Ok(out)
    }

    fn call(&self, func: &Function, args: &[Expr]) -> Operand {
        match self.call_inner(func, args) {
            Ok(op) => op,
            Err(e) => err(e),
        }
    }

    fn call_inner(&self, func: &Function, args: &[Expr]) -> Eval<Operand> {
        let n = args.len();
        let arity = |ok: bool| if ok { Ok(()) } else { Err(ErrorCode::Value) };
        let value = |v: CellValue| Ok(Operand::Value(v));
        match func {
            Function::Unknown(_) => Err(ErrorCode::Name),
            Function::Sum => {
                arity(n >= 1)?;
                let nums = self.numbers(args)?;
                value(number_result(nums.iter().fold(0.0, |acc, x| acc + x)))
            }
            Function::Average => {
                arity(n >= 1)?;
                let nums = self.numbers(args)?;
                if nums.is_empty() {
                    return Err(ErrorCode::DivZero);
                }
                let sum = nums.iter().fold(0.0, |acc, x| acc + x);
                value(number_result(sum / nums.len() as f64))
            }
            Function::Min | Function::Max => {
                arity(n >= 1)?;
                let nums = self.numbers(args)?;
                let pick = if *func == Function::Min {
                    f64::min
                } else {
                    f64::max
                };
                let r = nums.iter().copied().reduce(pick).unwrap_or(0.0);
                value(number_result(r))
            }
            Function::Count => {
                arity(n >= 1)?;
                let mut count = 0usize;
                for a in args {
                    match self.arg(a) {
                        Arg::Ref(r) => {
                            count += r
                                .cells()
                                .filter(|c| matches!(self.view.value(*c), CellValue::Number(_)))
                                .count()
                        }
                        Arg::Value(CellValue::Number(_) | CellValue::Bool(_)) => count += 1,
                        Arg::Value(_) => {}
                    }
                }
                value(CellValue::Number(count as f64))
            }
            Function::CountIf => {
                arity(n == 2)?;
                let range = self.range_arg(&args[0])?;
                let crit = Criterion::parse(&self.scalar(&args[1]))?;
                let count = range
                    .cells()
                    .filter(|c| crit.matches(self.view.value(*c)))
                    .count();
                value(CellValue::Number(count as f64))
            }
            Function::SumIf => {
                arity(n == 2 || n == 3)?;
                let range = self.range_arg(&args[0])?;
                let crit = Criterion::parse(&self.scalar(&args[1]))?;
                let sum_origin = if n == 3 {
                    self.range_arg(&args[2])?
                } else {
                    range
                };
                let mut total = 0.0;
                for dr in 0..range.height() {
                    for dc in 0..range.width() {
                        let probe = CellRef {
                            sheet: range.sheet,
                            col: range.start.col + dc,
                            row: range.start.row + dr,
                        };
                        if !crit.matches(self.view.value(probe)) {
                            continue;
                        }
                        // Only cells inside the written sum range are read, so
                        // the dependency graph sees every precedent.
                        let Some(cell) = sum_origin.at(dr, dc) else {
                            continue;
                        };
                        match self.view.value(cell) {
                            CellValue::Number(x) => total += x,
                            CellValue::Error(e) => return Err(*e),
                            _ => {}
                        }
                    }
                }
                value(number_result(total))
            }
            Function::If => {
                arity(n == 2 || n == 3)?;
                let cond = to_bool(&self.scalar(&args[0]))?;
                if cond {
                    Ok(self.eval(&args[1]))
                } else if n == 3 {
                    Ok(self.eval(&args[2]))
                } else {
                    value(CellValue::Bool(false))
                }
            }
            Function::And | Function::Or => {
                arity(n >= 1)?;
                let mut seen = false;
                let mut acc = *func == Function::And;
                let mut fold = |b: bool| {
                    seen = true;
                    acc = if *func == Function::And {
                        acc && b
                    } else {
                        acc || b
                    };
                };
                for a in args {
                    match self.arg(a) {
                        Arg::Ref(r) => {
                            for c in r.cells() {
                                match self.view.value(c) {
                                    CellValue::Bool(b) => fold(*b),
                                    CellValue::Number(x) => fold(*x != 0.0),
                                    CellValue::Error(e) => return Err(*e),
                                    _ => {}
                                }
                            }
                        }
                        Arg::Value(CellValue::Blank) => {}
                        Arg::Value(v) => fold(to_bool(&v)?),
                    }
                }
                if !seen {
                    return Err(ErrorCode::Value);
                }
                value(CellValue::Bool(acc))
            }
            Function::Not => {
                arity(n == 1)?;
                value(CellValue::Bool(!to_bool(&self.scalar(&args[0]))?))
            }
            Function::Round => {
                arity(n == 2)?;
                let x = self.number_arg(&args[0])?;
                let digits = libm::trunc(self.number_arg(&args[1])?);
                value(number_result(round_half_away(x, digits)))
            }
            Function::Abs => {
                arity(n == 1)?;
                value(number_result(libm::fabs(self.number_arg(&args[0])?)))
            }
            Function::Sqrt => {
                arity(n == 1)?;
                let x = self.number_arg(&args[0])?;
                if x < 0.0 {
                    return Err(ErrorCode::Value);
                }
                value(number_result(libm::sqrt(x)))
            }
            Function::Concatenate => {
                arity(n >= 1)?;
                let mut s = String::new();
                for a in args {
                    s.push_str(&to_text(&self.scalar(a))?);
                }
                value(CellValue::Text(s))
            }
            Function::VLookup => {
                arity(n == 3 || n == 4)?;
                let needle = self.scalar(&args[0]);
                if let CellValue::Error(e) = needle {
                    return Err(e);
                }
                let table = self.range_arg(&args[1])?;
                let col = libm::trunc(self.number_arg(&args[2])?);
                if n == 4 && to_bool(&self.scalar(&args[3]))? {
                    // approximate (sorted) lookup is not supported
                    return Err(ErrorCode::Value);
                }
                if col < 1.0 {
                    return Err(ErrorCode::Value);
                }
                if col > f64::from(table.width()) {
                    return Err(ErrorCode::Ref);
                }
                let col = col as u32 - 1;
                for r in 0..table.height() {
                    let key = table.at(r, 0).map(|c| self.view.value(c));
                    if key.is_some_and(|k| lookup_eq(&needle, k)) {
                        let hit = table.at(r, col).ok_or(ErrorCode::Ref)?;
                        return value(self.view.value(hit).clone());
                    }
                }
                Err(ErrorCode::NotAvailable)
            }
            Function::Index => {
                arity(n == 2 || n == 3)?;
                let range = self.range_arg(&args[0])?;
                let first = libm::trunc(self.number_arg(&args[1])?);
                let second = if n == 3 {
                    Some(libm::trunc(self.number_arg(&args[2])?))
                } else {
                    None
                };
                let (row, col) = match second {
                    Some(c) => (first, c),
                    None if range.height() == 1 => (1.0, first),
                    None if range.width() == 1 => (first, 1.0),
                    None => return Err(ErrorCode::Value),
                };
                if row < 1.0 || col < 1.0 {
                    return Err(ErrorCode::Value);
                }
                if row > f64::from(range.height()) || col > f64::from(range.width()) {
                    return Err(ErrorCode::Ref);
                }
                let hit = range
                    .at(row as u32 - 1, col as u32 - 1)
                    .ok_or(ErrorCode::Ref)?;
                value(self.view.value(hit).clone())
            }
            Function::Match => {
                arity(n == 2 || n == 3)?;
                let needle = self.scalar(&args[0]);
                if let CellValue::Error(e) = needle {
                    return Err(e);
                }
                let range = self.range_arg(&args[1])?;
                if n == 3 && self.number_arg(&args[2])? != 0.0 {
                    return Err(ErrorCode::Value);
                }
                if range.height() != 1 && range.width() != 1 {
                    return Err(ErrorCode::NotAvailable);
                }
                let hit = range
                    .cells()
                    .position(|c| lookup_eq(&needle, self.view.value(c)));
                match hit {
                    Some(i) => value(CellValue::Number((i + 1) as f64)),
                    None => Err(ErrorCode::NotAvailable),
                }
            }
        }
    }
}

/// Half-away-from-zero rounding to `digits` decimal places (negative digits
/// round to tens, hundreds, ...). The scaled value is nudged by a few ulps so
/// decimal inputs such as 2.675 round the way they read.
fn round_half_away(x: f64, digits: f64) -> f64 {
    if digits > 15.0 {
        return x;
    }
    if digits < -308.0 {
        return 0.0;
    }
    let scale = libm::pow(10.0, libm::fabs(digits));
    let scaled = if digits >= 0.0 { x * scale } else { x / scale };
    if !scaled.is_finite() {
        return x;
    }
    let nudged = scaled + scaled.signum() * libm::fabs(scaled) * f64::EPSILON * 4.0;
    let r = libm::round(nudged);
    if digits >= 0.0 {
        r / scale
    } else {
        r * scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CritOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
enum CritTarget {
    Number(f64),
    Text(String),
    Bool(bool),
}

/// COUNTIF/SUMIF criterion: an optional comparison operator followed by a
/// number or text literal. No wildcards.
#[derive(Debug, Clone, PartialEq)]
struct Criterion {
    op: CritOp,
    target: CritTarget,
}

impl Criterion {
    fn parse(v: &CellValue) -> Eval<Criterion> {
        let eq = |target| {
            Ok(Criterion {
                op: CritOp::Eq,
                target,
            })
        };
        match v {
            CellValue::Error(e) => Err(*e),
            CellValue::Number(n) => eq(CritTarget::Number(*n)),
            CellValue::Bool(b) => eq(CritTarget::Bool(*b)),
            CellValue::Blank => eq(CritTarget::Text(String::new())),
            CellValue::Text(s) => {
                let (op, rest) = [
                    ("<=", CritOp::Le),
                    (">=", CritOp::Ge),
                    ("<>", CritOp::Ne),
                    ("<", CritOp::Lt),
                    (">", CritOp::Gt),
                    ("=", CritOp::Eq),
                ]
                .into_iter()
                .find_map(|(p, op)| s.strip_prefix(p).map(|rest| (op, rest)))
                .unwrap_or((CritOp::Eq, s.as_str()));
                let target = if let Some(n) = parse_decimal(rest) {
                    CritTarget::Number(n)
                } else if rest.eq_ignore_ascii_case("TRUE") {
                    CritTarget::Bool(true)
                } else if rest.eq_ignore_ascii_case("FALSE") {
                    CritTarget::Bool(false)
                } else {
                    CritTarget::Text(String::from(rest))
                };
                Ok(Criterion { op, target })
            }
        }
    }

    fn test(&self, ord: Ordering) -> bool {
        match self.op {
            CritOp::Eq => ord == Ordering::Equal,
            CritOp::Ne => ord != Ordering::Equal,
            CritOp::Lt => ord == Ordering::Less,
            CritOp::Le => ord != Ordering::Greater,
            CritOp::Gt => ord == Ordering::Greater,
            CritOp::Ge => ord != Ordering::Less,
        }
    }

    fn matches(&self, cell: &CellValue) -> bool {
        let ord = match (cell, &self.target) {
            (CellValue::Error(_), _) => return false,
            (CellValue::Number(x), CritTarget::Number(y)) => x.partial_cmp(y),
            (CellValue::Bool(x), CritTarget::Bool(y)) => Some(x.cmp(y)),
            (CellValue::Text(x), CritTarget::Text(y)) => Some(fold_case(x).cmp(&fold_case(y))),
            (CellValue::Blank, CritTarget::Text(y)) if y.is_empty() => Some(Ordering::Equal),
            _ => None,
        };
        match ord {
            Some(o) => self.test(o),
            // values of a different type are only ever "not equal"
            None => self.op == CritOp::Ne,
        }
    }
}

/// Strict decimal grammar: `[+-]digits[.digits][e[+-]digits]`. Rejects
/// `inf`, `nan`, hex and empty strings that `str::parse` would accept or
/// that are not what a user typing a number means.
pub fn parse_decimal(text: &str) -> Option<f64> {
    let t = text.trim();
    let b = t.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        i += 1;
    }
    let int_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let mut digits = i - int_start;
    if i < b.len() && b[i] == b'.' {
        i += 1;
        let frac_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        digits += i - frac_start;
    }
    if digits == 0 {
        return None;
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        i += 1;
        if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
            i += 1;
        }
        let exp_start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == exp_start {
            return None;
        }
    }
    if i != b.len() {
        return None;
    }
    t.parse::<f64>().ok().filter(|x| x.is_finite())
}
