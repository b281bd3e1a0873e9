//! Random workbook generation plus an evaluation oracle that shares no code
//! with the dependency graph: precedents come from the generator's own
//! bookkeeping, cycles are found by brute-force reachability and values by
//! memoised recursion.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use wrapsheet_core::address::column_name;
use wrapsheet_core::formula::{evaluate, ValueView};
use wrapsheet_core::value::format_number;
use wrapsheet_core::{CellRef, CellValue, ErrorCode, Pos, SheetId, Workbook};

/// (sheet index, column, row), all 0-based.
pub type Key = (usize, u32, u32);

#[derive(Debug, Clone)]
pub enum GenCell {
    Literal(CellValue),
    Formula { source: String, refs: BTreeSet<Key> },
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub sheets: usize,
    pub cols: u32,
    pub rows: u32,
    pub max_depth: u32,
    pub formula_share: f64,
    pub blank_share: f64,
    /// Chance that a reference ignores the acyclic layout.
    pub wild_ref: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            sheets: 2,
            cols: 6,
            rows: 16,
            max_depth: 6,
            formula_share: 0.45,
            blank_share: 0.15,
            wild_ref: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenBook {
    pub sheets: Vec<String>,
    pub cells: BTreeMap<Key, GenCell>,
    pub cfg: GenConfig,
}

pub fn key_ref(k: Key) -> CellRef {
    CellRef::new(
        SheetId(k.0 as u32),
        Pos {
            col: k.1 + 1,
            row: k.2 + 1,
        },
    )
}

impl GenBook {
    pub fn build(&self) -> Workbook {
        let mut b = Workbook::builder();
        for name in &self.sheets {
            b.add_sheet(name).unwrap();
        }
        for (k, cell) in &self.cells {
            let r = key_ref(*k);
            match cell {
                GenCell::Literal(v) => {
                    b.literal(r.sheet, r.pos(), v.clone()).unwrap();
                }
                GenCell::Formula { source, .. } => {
                    b.formula(r.sheet, r.pos(), source).unwrap();
                }
            }
        }
        b.build().unwrap()
    }

    pub fn formula_keys(&self) -> Vec<Key> {
        self.cells
            .iter()
            .filter(|(_, c)| matches!(c, GenCell::Formula { .. }))
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn input_keys(&self) -> Vec<Key> {
        let mut out = Vec::new();
        for s in 0..self.sheets.len() {
            for c in 0..self.cfg.cols {
                for r in 0..self.cfg.rows {
                    if !matches!(self.cells.get(&(s, c, r)), Some(GenCell::Formula { .. })) {
                        out.push((s, c, r));
                    }
                }
            }
        }
        out
    }

    fn precedents(&self, k: Key) -> impl Iterator<Item = Key> + '_ {
        let refs = match self.cells.get(&k) {
            Some(GenCell::Formula { refs, .. }) => Some(refs),
            _ => None,
        };
        refs.into_iter()
            .flatten()
            .copied()
            .filter(|p| matches!(self.cells.get(p), Some(GenCell::Formula { .. })))
    }

    /// Formula cells on a cycle or reading (transitively) from one.
    pub fn cyclic_oracle(&self) -> BTreeSet<Key> {
        let formulas = self.formula_keys();
        let reach: BTreeMap<Key, BTreeSet<Key>> = formulas
            .iter()
            .map(|&f| {
                let mut seen = BTreeSet::new();
                let mut stack: Vec<Key> = self.precedents(f).collect();
                while let Some(p) = stack.pop() {
                    if seen.insert(p) {
                        stack.extend(self.precedents(p));
                    }
                }
                (f, seen)
            })
            .collect();
        let on_cycle: BTreeSet<Key> = formulas
            .iter()
            .copied()
            .filter(|f| reach[f].contains(f))
            .collect();
        formulas
            .into_iter()
            .filter(|f| on_cycle.contains(f) || reach[f].iter().any(|p| on_cycle.contains(p)))
            .collect()
    }

    /// Formula cells whose value can change when `edited` changes.
    pub fn dependent_oracle(&self, edited: &[Key]) -> BTreeSet<Key> {
        let formulas = self.formula_keys();
        let mut dirty: BTreeSet<Key> = edited.iter().copied().collect();
        let mut out = BTreeSet::new();
        loop {
            let before = out.len();
            for &f in &formulas {
                if out.contains(&f) {
                    continue;
                }
                let GenCell::Formula { refs, .. } = &self.cells[&f] else {
                    unreachable!()
                };
                if dirty.contains(&f) || refs.iter().any(|r| dirty.contains(r)) {
                    out.insert(f);
                    dirty.insert(f);
                }
            }
            if out.len() == before {
                return out;
            }
        }
    }

    /// Expected value of every formula cell.
    pub fn value_oracle(&self, wb: &Workbook) -> BTreeMap<Key, CellValue> {
        let cyclic = self.cyclic_oracle();
        let mut memo: BTreeMap<Key, CellValue> = cyclic
            .iter()
            .map(|k| (*k, CellValue::Error(ErrorCode::Cycle)))
            .collect();
        for f in self.formula_keys() {
            self.eval_into(f, wb, &mut memo);
        }
        memo
    }

    fn eval_into(&self, k: Key, wb: &Workbook, memo: &mut BTreeMap<Key, CellValue>) {
        if memo.contains_key(&k) {
            return;
        }
        let precedents: Vec<Key> = self.precedents(k).collect();
        for p in precedents {
            self.eval_into(p, wb, memo);
        }
        let v = match wb.formula(key_ref(k)) {
            Some(Ok(expr)) => evaluate(
                expr,
                &OracleView {
                    book: self,
                    wb,
                    memo,
                },
            ),
            _ => CellValue::Error(ErrorCode::Value),
        };
        memo.insert(k, v);
    }
}

static BLANK: CellValue = CellValue::Blank;

struct OracleView<'a> {
    book: &'a GenBook,
    wb: &'a Workbook,
    memo: &'a BTreeMap<Key, CellValue>,
}

impl ValueView for OracleView<'_> {
    fn value(&self, cell: CellRef) -> &CellValue {
        let k = (cell.sheet.index(), cell.col - 1, cell.row - 1);
        if let Some(v) = self.memo.get(&k) {
            return v;
        }
        if self.wb.is_formula(cell) {
            panic!("oracle read {k:?} before evaluating it");
        }
        match self.book.cells.get(&k) {
            Some(GenCell::Literal(v)) => v,
            _ => &BLANK,
        }
    }

    fn has_sheet(&self, sheet: SheetId) -> bool {
        sheet.index() < self.book.sheets.len()
    }
}

pub fn random_literal(rng: &mut StdRng) -> CellValue {
    match rng.gen_range(0..10) {
        0..=5 => CellValue::Number(rng.gen_range(-40..=40) as f64),
        6 => CellValue::Number(rng.gen_range(-400..=400) as f64 / 8.0),
        7 => CellValue::text(*["RC-01", "RC-02", "RC-03", "a", "b"].choose(rng).unwrap()),
        8 => CellValue::Bool(rng.gen_bool(0.5)),
        _ => CellValue::Number(0.0),
    }
}

pub fn random_book(rng: &mut StdRng, cfg: &GenConfig) -> GenBook {
    let sheets: Vec<String> = (1..=cfg.sheets).map(|i| format!("S{i}")).collect();
    let mut cells = BTreeMap::new();
    for s in 0..cfg.sheets {
        for c in 0..cfg.cols {
            for r in 0..cfg.rows {
                let roll: f64 = rng.gen();
                if roll < cfg.blank_share {
                    continue;
                }
                let cell = if roll < cfg.blank_share + cfg.formula_share {
                    let mut g = FormulaGen {
                        rng: &mut *rng,
                        cfg,
                        host: (s, c, r),
                        refs: BTreeSet::new(),
                        sheets: &sheets,
                    };
                    let body = g.expr(0);
                    GenCell::Formula {
                        source: format!("={body}"),
                        refs: g.refs,
                    }
                } else {
                    GenCell::Literal(random_literal(rng))
                };
                cells.insert((s, c, r), cell);
            }
        }
    }
    GenBook {
        sheets,
        cells,
        cfg: cfg.clone(),
    }
}

struct FormulaGen<'a> {
    rng: &'a mut StdRng,
    cfg: &'a GenConfig,
    host: Key,
    refs: BTreeSet<Key>,
    sheets: &'a [String],
}

const BINARY: [&str; 12] = [
    "+", "-", "*", "/", "^", "&", "=", "<>", "<", "<=", ">", ">=",
];

impl FormulaGen<'_> {
    /// A column to read from plus how many columns may follow it. Tame
    /// picks keep to earlier columns so the workbook stays acyclic; a wild
    /// pick may land anywhere.
    fn source_column(&mut self) -> Option<(usize, u32, u32)> {
        let cols = self.cfg.cols;
        if self.rng.gen_bool(self.cfg.wild_ref) {
            let c = self.rng.gen_range(0..cols);
            return Some((self.rng.gen_range(0..self.cfg.sheets), c, cols - c));
        }
        let (hs, hc, _) = self.host;
        let earlier = hs * cols as usize + hc as usize;
        if earlier == 0 {
            return None;
        }
        let pick = self.rng.gen_range(0..earlier);
        let (s, c) = (pick / cols as usize, (pick % cols as usize) as u32);
        let room = if s == hs { hc - c } else { cols - c };
        Some((s, c, room))
    }

    fn qualify(&self, sheet: usize) -> String {
        if sheet == self.host.0 {
            String::new()
        } else {
            format!("{}!", self.sheets[sheet])
        }
    }

    fn cell(&mut self) -> Option<String> {
        let (s, c, _) = self.source_column()?;
        let r = self.rng.gen_range(0..self.cfg.rows);
        self.refs.insert((s, c, r));
        Some(format!(
            "{}{}{}",
            self.qualify(s),
            column_name(c + 1),
            r + 1
        ))
    }

    /// A range within one sheet; `width` asks for a column count, which is
    /// cut down when there is no room for it.
    fn range(&mut self, width: Option<u32>) -> Option<(String, u32, u32)> {
        let (s, c0, room) = self.source_column()?;
        let w = width
            .unwrap_or_else(|| self.rng.gen_range(1..=room.min(3)))
            .min(room);
        let h = self.rng.gen_range(1..=6.min(self.cfg.rows));
        let r0 = self.rng.gen_range(0..=self.cfg.rows - h);
        for c in c0..c0 + w {
            for r in r0..r0 + h {
                self.refs.insert((s, c, r));
            }
        }
        let text = format!(
            "{}{}{}:{}{}",
            self.qualify(s),
            column_name(c0 + 1),
            r0 + 1,
            column_name(c0 + w),
            r0 + h
        );
        Some((text, w, h))
    }

    fn leaf(&mut self) -> String {
        match self.rng.gen_range(0..10) {
            0..=4 => self.cell().unwrap_or_else(|| self.number()),
            5..=7 => self.number(),
            8 => format!(
                "\"{}\"",
                ["RC-01", "RC-02", "a", "x\"\"y"].choose(self.rng).unwrap()
            ),
            _ => ["TRUE", "FALSE"].choose(self.rng).unwrap().to_string(),
        }
    }

    fn number(&mut self) -> String {
        let n = if self.rng.gen_bool(0.7) {
            self.rng.gen_range(0..=20) as f64
        } else {
            self.rng.gen_range(0..=400) as f64 / 16.0
        };
        format_number(n)
    }

    fn range_or_expr(&mut self, depth: u32) -> String {
        if self.rng.gen_bool(0.5) {
            if let Some((r, _, _)) = self.range(None) {
                return r;
            }
        }
        self.expr(depth + 1)
    }

    fn args(&mut self, depth: u32, lo: usize, hi: usize, ranges: bool) -> String {
        let n = self.rng.gen_range(lo..=hi);
        (0..n)
            .map(|_| {
                if ranges {
                    self.range_or_expr(depth)
                } else {
                    self.expr(depth + 1)
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn criterion(&mut self) -> String {
        let op = *["", "=", "<>", "<", "<=", ">", ">="]
            .choose(self.rng)
            .unwrap();
        let operand = match self.rng.gen_range(0..3) {
            0 => format!("{}", self.rng.gen_range(-10..=30)),
            1 => ["RC-01", "a", "TRUE"].choose(self.rng).unwrap().to_string(),
            _ => return self.expr(5),
        };
        format!("\"{op}{operand}\"")
    }

    pub fn expr(&mut self, depth: u32) -> String {
        if depth + 1 >= self.cfg.max_depth || self.rng.gen_bool(0.3) {
            return self.leaf();
        }
        match self.rng.gen_range(0..24) {
            0..=5 => {
                let op = *BINARY.choose(self.rng).unwrap();
                format!("{}{op}{}", self.expr(depth + 1), self.expr(depth + 1))
            }
            6 => format!("({})", self.expr(depth + 1)),
            7 => format!("-{}", self.expr(depth + 1)),
            8 => {
                let f = *["SUM", "AVERAGE", "MIN", "MAX", "COUNT"]
                    .choose(self.rng)
                    .unwrap();
                format!("{f}({})", self.args(depth, 1, 3, true))
            }
            9 => match self.range(None) {
                Some((r, w, _)) if self.rng.gen_bool(0.5) => {
                    let sum = self.range(Some(w)).map_or_else(|| r.clone(), |x| x.0);
                    format!("SUMIF({r},{},{sum})", self.criterion())
                }
                Some((r, _, _)) => format!("COUNTIF({r},{})", self.criterion()),
                None => self.leaf(),
            },
            10 => format!(
                "IF({},{},{})",
                self.expr(depth + 1),
                self.expr(depth + 1),
                self.expr(depth + 1)
            ),
            11 => {
                let f = *["AND", "OR"].choose(self.rng).unwrap();
                format!("{f}({})", self.args(depth, 1, 3, false))
            }
            12 => format!("NOT({})", self.expr(depth + 1)),
            13 => format!(
                "ROUND({},{})",
                self.expr(depth + 1),
                self.rng.gen_range(-1..=3)
            ),
            14 => format!("ABS({})", self.expr(depth + 1)),
            15 => format!("SQRT({})", self.expr(depth + 1)),
            16 => format!("CONCATENATE({})", self.args(depth, 1, 3, false)),
            17 => match self.range(None) {
                Some((r, w, _)) => format!(
                    "VLOOKUP({},{r},{},FALSE)",
                    self.expr(depth + 1),
                    self.rng.gen_range(1..=w + 1)
                ),
                None => self.leaf(),
            },
            18 => match self.range(None) {
                Some((r, w, h)) => format!(
                    "INDEX({r},{},{})",
                    self.rng.gen_range(0..=h + 1),
                    self.rng.gen_range(0..=w)
                ),
                None => self.leaf(),
            },
            19 => match self.range(Some(1)) {
                Some((r, _, _)) => format!("MATCH({},{r},0)", self.expr(depth + 1)),
                None => self.leaf(),
            },
            20 => format!("NOSUCHFN({})", self.expr(depth + 1)),
            _ => self.leaf(),
        }
    }
}

/// Picks a non-formula cell and a new literal for it.
pub fn random_edit(rng: &mut StdRng, book: &GenBook) -> (Key, CellValue) {
    let inputs = book.input_keys();
    let k = *inputs.choose(rng).unwrap();
    let v = if rng.gen_bool(0.1) {
        CellValue::Blank
    } else {
        random_literal(rng)
    };
    (k, v)
}

/// Applies an edit to the generator's own model.
pub fn apply_edit(book: &GenBook, k: Key, v: &CellValue) -> GenBook {
    let mut out = book.clone();
    if v.is_blank() {
        out.cells.remove(&k);
    } else {
        out.cells.insert(k, GenCell::Literal(v.clone()));
    }
    out
}

/// Value-by-value bit comparison of two snapshots over every formula cell.
pub fn first_mismatch(
    book: &GenBook,
    a: &Workbook,
    b: &Workbook,
) -> Option<(Key, CellValue, CellValue)> {
    book.formula_keys().into_iter().find_map(|k| {
        let (x, y) = (a.value(key_ref(k)), b.value(key_ref(k)));
        (!x.bit_eq(y)).then(|| (k, x.clone(), y.clone()))
    })
}
