//! The in-memory workbook model.
//!
//! A [`Workbook`] is an immutable snapshot. Edits ([`Workbook::set_inputs`])
//! and recalculation return new snapshots that share unchanged sheets and the
//! compiled formula program with their parent.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::address::{self, AddressError, CellRef, Pos, RangeRef, SheetId};
use crate::formula::eval::ValueView;
use crate::formula::graph::DependencyGraph;
use crate::formula::parser::{self, Expr, ParseError, Scope};
use crate::value::CellValue;

pub(crate) static BLANK: CellValue = CellValue::Blank;

/// Index of a formula cell in its workbook's compiled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FormulaId(pub u32);

impl FormulaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Cell {
    Literal(CellValue),
    Formula(FormulaId),
}

/// A cell as seen through the public API.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellView<'a> {
    Literal(&'a CellValue),
    Formula {
        source: &'a str,
        value: &'a CellValue,
    },
}

impl<'a> CellView<'a> {
    pub fn value(&self) -> &'a CellValue {
        match self {
            CellView::Literal(v) => v,
            CellView::Formula { value, .. } => value,
        }
    }

    pub fn is_formula(&self) -> bool {
        matches!(self, CellView::Formula { .. })
    }
}

#[derive(Debug)]
pub(crate) struct FormulaCell {
    pub at: CellRef,
    pub source: String,
    pub expr: Result<Expr, ParseError>,
}

/// Parsed formulas plus their dependency graph. Shared by every snapshot
/// derived from the same loaded workbook, since edits never touch formulas.
#[derive(Debug)]
pub(crate) struct Program {
    pub formulas: Vec<FormulaCell>,
    pub graph: DependencyGraph,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct NamedRange {
    pub name: String,
    pub range: RangeRef,
}

/// Named ranges, keyed case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameTable {
    by_key: BTreeMap<String, NamedRange>,
}

impl NameTable {
    pub fn get(&self, name: &str) -> Option<RangeRef> {
        self.by_key.get(&name.to_uppercase()).map(|n| n.range)
    }

    /// Names sorted lexicographically by their declared spelling.
    pub fn iter(&self) -> impl Iterator<Item = (&str, RangeRef)> {
        let mut all: Vec<_> = self
            .by_key
            .values()
            .map(|n| (n.name.as_str(), n.range))
            .collect();
        all.sort_by(|a, b| a.0.cmp(b.0));
        all.into_iter()
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }
}

/// SHA-256 over the canonical value model.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub [u8; 32]);

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkbookError {
    #[error("duplicate sheet name `{0}`")]
    DuplicateSheet(String),
    #[error("sheet name must not be empty")]
    EmptySheetName,
    #[error("{location}: {message}")]
    Cell { location: String, message: String },
    #[error("named range `{name}`: {message}")]
    Name { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindingError {
    #[error("{0} holds a formula and cannot receive input")]
    FormulaCell(String),
    #[error("sheet #{0} does not exist")]
    UnknownSheet(u32),
}

#[derive(Debug, Clone)]
enum Content {
    Literal(CellValue),
    Formula(String),
}

/// Accumulates sheets, cells and names, then compiles them into a
/// [`Workbook`].
#[derive(Debug, Clone, Default)]
pub struct WorkbookBuilder {
    sheets: Vec<(String, BTreeMap<Pos, Content>)>,
    names: Vec<(String, String)>,
}

impl WorkbookBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sheet(&mut self, name: &str) -> Result<SheetId, WorkbookError> {
        if name.is_empty() {
            return Err(WorkbookError::EmptySheetName);
        }
        if self
            .sheets
            .iter()
            .any(|(n, _)| n.to_uppercase() == name.to_uppercase())
        {
            return Err(WorkbookError::DuplicateSheet(name.to_string()));
        }
        self.sheets.push((name.to_string(), BTreeMap::new()));
        Ok(SheetId(self.sheets.len() as u32 - 1))
    }

    /// Sets a literal. `Blank` clears the cell.
    pub fn literal(
        &mut self,
        sheet: SheetId,
        pos: Pos,
        value: CellValue,
    ) -> Result<&mut Self, WorkbookError> {
        if let CellValue::Number(n) = value {
            if !n.is_finite() {
                return Err(self.cell_error(sheet, pos, "number must be finite".to_string()));
            }
        }
        let cells = &mut self.sheets[sheet.index()].1;
        if value.is_blank() {
            cells.remove(&pos);
        } else {
            cells.insert(pos, Content::Literal(CellValue::normalized(value)));
        }
        Ok(self)
    }

    pub fn formula(
        &mut self,
        sheet: SheetId,
        pos: Pos,
        source: &str,
    ) -> Result<&mut Self, WorkbookError> {
        if !source.starts_with('=') {
            return Err(self.cell_error(sheet, pos, "formula must begin with `=`".to_string()));
        }
        self.sheets[sheet.index()]
            .1
            .insert(pos, Content::Formula(source.to_string()));
        Ok(self)
    }

    /// Defines a named range; `target` is a sheet-qualified `Sheet!A1` or
    /// `Sheet!A1:B3`.
    pub fn name(&mut self, name: &str, target: &str) -> &mut Self {
        self.names.push((name.to_string(), target.to_string()));
        self
    }

    fn cell_error(&self, sheet: SheetId, pos: Pos, message: String) -> WorkbookError {
        let sheet_name = self
            .sheets
            .get(sheet.index())
            .map(|s| s.0.as_str())
            .unwrap_or("?");
        WorkbookError::Cell {
            location: alloc::format!("{}!{}", address::quote_sheet(sheet_name), pos),
            message,
        }
    }

    pub fn build(self) -> Result<Workbook, WorkbookError> {
        let sheet_names: Vec<String> = self.sheets.iter().map(|(n, _)| n.clone()).collect();

        let mut names = NameTable::default();
        for (name, target) in &self.names {
            let err = |message: &str| WorkbookError::Name {
                name: name.clone(),
                message: message.to_string(),
            };
            if !parser::is_valid_name(name) {
                return Err(err("not a valid name"));
            }
            let range = resolve_range(&sheet_names, target).map_err(|e| WorkbookError::Name {
                name: name.clone(),
                message: e.to_string(),
            })?;
            let key = name.to_uppercase();
            if names.by_key.contains_key(&key) {
                return Err(err("defined more than once"));
            }
            names.by_key.insert(
                key,
                NamedRange {
                    name: name.clone(),
                    range,
                },
            );
        }

        let scope = Scope {
            sheets: &sheet_names,
            names: &names,
        };
        let mut formulas = Vec::new();
        let mut cells = Vec::with_capacity(self.sheets.len());
        for (idx, (_, contents)) in self.sheets.into_iter().enumerate() {
            let sheet = SheetId(idx as u32);
            let mut map = BTreeMap::new();
            for (pos, content) in contents {
                let cell = match content {
                    Content::Literal(v) => Cell::Literal(v),
                    Content::Formula(source) => {
                        let at = CellRef::new(sheet, pos);
                        let expr = parser::parse_formula(&source, sheet, &scope);
                        let id = FormulaId(formulas.len() as u32);
                        formulas.push(FormulaCell { at, source, expr });
                        Cell::Formula(id)
                    }
                };
                map.insert(pos, cell);
            }
            cells.push(Arc::new(map));
        }

        let graph = DependencyGraph::build(&formulas);
        let values = Arc::new(alloc::vec![CellValue::Blank; formulas.len()]);
        let mut wb = Workbook {
            sheets: Arc::from(sheet_names),
            names: Arc::new(names),
            cells,
            program: Arc::new(Program { formulas, graph }),
            values,
            id: ContentHash([0; 32]),
        };
        wb.id = wb.compute_hash();
        Ok(wb)
    }
}

impl CellValue {
    fn normalized(self) -> CellValue {
        match self {
            CellValue::Number(n) => CellValue::number(n),
            other => other,
        }
    }
}

fn resolve_sheet(sheets: &[String], name: &str) -> Option<SheetId> {
    let upper = name.to_uppercase();
    sheets
        .iter()
        .position(|s| s.to_uppercase() == upper)
        .map(|i| SheetId(i as u32))
}

fn resolve_range(sheets: &[String], text: &str) -> Result<RangeRef, AddressError> {
    let (sheet, area) =
        address::split_qualified(text).ok_or_else(|| AddressError::Syntax(text.to_string()))?;
    let sheet = resolve_sheet(sheets, &sheet).ok_or(AddressError::UnknownSheet(sheet))?;
    let (a, b) = address::parse_area(area)?;
    Ok(RangeRef::new(sheet, a, b))
}

/// An immutable workbook snapshot: sheets of cells plus named ranges.
///
/// Formula values are part of the snapshot. A freshly built workbook holds
/// `Blank` for every formula until it is recalculated.
#[derive(Debug, Clone)]
pub struct Workbook {
    pub(crate) sheets: Arc<[String]>,
    pub(crate) names: Arc<NameTable>,
    pub(crate) cells: Vec<Arc<BTreeMap<Pos, Cell>>>,
    pub(crate) program: Arc<Program>,
    pub(crate) values: Arc<Vec<CellValue>>,
    id: ContentHash,
}

impl Workbook {
    pub fn builder() -> WorkbookBuilder {
        WorkbookBuilder::new()
    }

    /// Content hash of sheets, cells and names. Formula values are derived
    /// data and do not contribute.
    pub fn id(&self) -> ContentHash {
        self.id
    }

    pub fn sheet_count(&self) -> usize {
        self.sheets.len()
    }

    pub fn sheet_names(&self) -> impl Iterator<Item = &str> {
        self.sheets.iter().map(String::as_str)
    }

    pub fn sheet_name(&self, sheet: SheetId) -> Option<&str> {
        self.sheets.get(sheet.index()).map(String::as_str)
    }

    /// Case-insensitive sheet lookup.
    pub fn sheet_id(&self, name: &str) -> Option<SheetId> {
        resolve_sheet(&self.sheets, name)
    }

    pub fn names(&self) -> &NameTable {
        &self.names
    }

    /// Resolves a sheet-qualified reference such as `Exposure!B2`.
    pub fn cell_ref(&self, text: &str) -> Result<CellRef, AddressError> {
        let range = self.range_ref(text)?;
        if range.start != range.end {
            return Err(AddressError::Syntax(text.to_string()));
        }
        Ok(CellRef::new(range.sheet, range.start))
    }

    /// Resolves a sheet-qualified area (`Sheet!A1:B3`, or a single cell).
    pub fn range_ref(&self, text: &str) -> Result<RangeRef, AddressError> {
        resolve_range(&self.sheets, text)
    }

    pub fn format_ref(&self, cell: CellRef) -> String {
        let sheet = self.sheet_name(cell.sheet).unwrap_or("#REF");
        alloc::format!("{}!{}", address::quote_sheet(sheet), cell.pos())
    }

    pub fn format_range(&self, range: RangeRef) -> String {
        let sheet = self.sheet_name(range.sheet).unwrap_or("#REF");
        if range.start == range.end {
            alloc::format!("{}!{}", address::quote_sheet(sheet), range.start)
        } else {
            alloc::format!(
                "{}!{}:{}",
                address::quote_sheet(sheet),
                range.start,
                range.end
            )
        }
    }

    pub fn cell(&self, at: CellRef) -> Option<CellView<'_>> {
        let cell = self.cells.get(at.sheet.index())?.get(&at.pos())?;
        Some(match cell {
            Cell::Literal(v) => CellView::Literal(v),
            Cell::Formula(id) => CellView::Formula {
                source: &self.program.formulas[id.index()].source,
                value: &self.values[id.index()],
            },
        })
    }

    /// Current value of a cell; `Blank` for empty or unknown cells.
    pub fn value(&self, at: CellRef) -> &CellValue {
        self.cell(at).map(|c| c.value()).unwrap_or(&BLANK)
    }

    pub fn is_formula(&self, at: CellRef) -> bool {
        matches!(self.cell(at), Some(CellView::Formula { .. }))
    }

    /// Non-empty cells of one sheet in canonical (column-major) order.
    pub fn cells(&self, sheet: SheetId) -> impl Iterator<Item = (Pos, CellView<'_>)> {
        let map = self.cells.get(sheet.index());
        map.into_iter().flat_map(move |m| {
            m.iter().map(move |(pos, cell)| {
                let view = match cell {
                    Cell::Literal(v) => CellView::Literal(v),
                    Cell::Formula(id) => CellView::Formula {
                        source: &self.program.formulas[id.index()].source,
                        value: &self.values[id.index()],
                    },
                };
                (*pos, view)
            })
        })
    }

    pub fn formula_count(&self) -> usize {
        self.program.formulas.len()
    }

    /// Formula cells in program order (canonical cell order).
    pub fn formula_cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        self.program.formulas.iter().map(|f| f.at)
    }

    /// Parsed form of a formula cell, or its parse error.
    pub fn formula(&self, at: CellRef) -> Option<&Result<Expr, ParseError>> {
        match self.cells.get(at.sheet.index())?.get(&at.pos())? {
            Cell::Formula(id) => Some(&self.program.formulas[id.index()].expr),
            Cell::Literal(_) => None,
        }
    }

    pub fn graph(&self) -> &DependencyGraph {
        &self.program.graph
    }

    /// Parses a formula against this workbook's sheets and names, as if it
    /// were stored on `host`.
    pub fn parse_formula(&self, source: &str, host: SheetId) -> Result<Expr, ParseError> {
        parser::parse_formula(
            source,
            host,
            &Scope {
                sheets: &self.sheets,
                names: &self.names,
            },
        )
    }

    /// Returns a new snapshot with the given literal edits applied. Formula
    /// values are carried over unchanged; recalculate with the edited cells as
    /// the dirty set to bring them up to date.
    pub fn set_inputs(&self, edits: &[(CellRef, CellValue)]) -> Result<Workbook, BindingError> {
        let mut cells = self.cells.clone();
        for (at, value) in edits {
            let sheet = cells
                .get_mut(at.sheet.index())
                .ok_or(BindingError::UnknownSheet(at.sheet.0))?;
            if let Some(Cell::Formula(_)) = sheet.get(&at.pos()) {
                return Err(BindingError::FormulaCell(self.format_ref(*at)));
            }
            let map = Arc::make_mut(sheet);
            match value.clone().normalized() {
                CellValue::Blank => {
                    map.remove(&at.pos());
                }
                v => {
                    map.insert(at.pos(), Cell::Literal(v));
                }
            }
        }
        let mut wb = Workbook {
            sheets: self.sheets.clone(),
            names: self.names.clone(),
            cells,
            program: self.program.clone(),
            values: self.values.clone(),
            id: self.id,
        };
        wb.id = wb.compute_hash();
        Ok(wb)
    }

    pub(crate) fn with_values(&self, values: Vec<CellValue>) -> Workbook {
        Workbook {
            sheets: self.sheets.clone(),
            names: self.names.clone(),
            cells: self.cells.clone(),
            program: self.program.clone(),
            values: Arc::new(values),
            id: self.id,
        }
    }

    /// True when both snapshots hold bit-identical values in every cell and
    /// the same content.
    pub fn values_identical(&self, other: &Workbook) -> bool {
        self.id == other.id
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .all(|(a, b)| a.bit_eq(b))
    }

    fn compute_hash(&self) -> ContentHash {
        let mut h = Sha256::new();
        h.update(b"wrapsheet-workbook-v1");
        let put_str = |h: &mut Sha256, s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        for (idx, name) in self.sheets.iter().enumerate() {
            h.update(b"S");
            put_str(&mut h, name);
            for (pos, cell) in self.cells[idx].iter() {
                h.update(pos.col.to_le_bytes());
                h.update(pos.row.to_le_bytes());
                match cell {
                    Cell::Literal(CellValue::Number(n)) => {
                        h.update(b"n");
                        h.update(n.to_bits().to_le_bytes());
                    }
                    Cell::Literal(CellValue::Text(s)) => {
                        h.update(b"t");
                        put_str(&mut h, s);
                    }
                    Cell::Literal(CellValue::Bool(b)) => {
                        h.update(b"b");
                        h.update([u8::from(*b)]);
                    }
                    Cell::Literal(CellValue::Error(e)) => {
                        h.update(b"e");
                        put_str(&mut h, e.as_str());
                    }
                    Cell::Literal(CellValue::Blank) => {
                        unreachable!("blank literals are never stored")
                    }
                    Cell::Formula(id) => {
                        h.update(b"f");
                        put_str(&mut h, &self.program.formulas[id.index()].source);
                    }
                }
            }
        }
        for (name, range) in self.names.iter() {
            h.update(b"N");
            put_str(&mut h, name);
            h.update(range.sheet.0.to_le_bytes());
            for v in [
                range.start.col,
                range.start.row,
                range.end.col,
                range.end.row,
            ] {
                h.update(v.to_le_bytes());
            }
        }
        ContentHash(h.finalize().into())
    }
}

impl ValueView for Workbook {
    fn value(&self, cell: CellRef) -> &CellValue {
        Workbook::value(self, cell)
    }

    fn has_sheet(&self, sheet: SheetId) -> bool {
        sheet.index() < self.sheets.len()
    }
}
