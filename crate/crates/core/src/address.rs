//! A1-style cell addressing.
//!
//! A [`CellRef`] names its sheet by position in the owning workbook, so a
//! sheet-qualified reference such as `Exposure!B2` only exists once it has
//! been resolved against a workbook (see [`crate::Workbook::cell_ref`]).

use alloc::string::String;
use core::fmt;

use thiserror::Error;

pub const MAX_COLUMNS: u32 = 16_384;
pub const MAX_ROWS: u32 = 1_048_576;

/// Position of a sheet inside its workbook.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SheetId(pub u32);

impl SheetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Column/row position within a sheet, both 1-based.
///
/// Ordering is column-major, which is also the canonical cell order on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pos {
    pub col: u32,
    pub row: u32,
}

impl Pos {
    pub fn new(col: u32, row: u32) -> Result<Pos, AddressError> {
        if !(1..=MAX_COLUMNS).contains(&col) || !(1..=MAX_ROWS).contains(&row) {
            return Err(AddressError::OutOfBounds { col, row });
        }
        Ok(Pos { col, row })
    }

    pub fn parse(a1: &str) -> Result<Pos, AddressError> {
        parse_a1(a1)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_column(f, self.col)?;
        write!(f, "{}", self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellRef {
    pub sheet: SheetId,
    pub col: u32,
    pub row: u32,
}

impl CellRef {
    pub fn new(sheet: SheetId, pos: Pos) -> CellRef {
        CellRef {
            sheet,
            col: pos.col,
            row: pos.row,
        }
    }

    pub fn pos(self) -> Pos {
        Pos {
            col: self.col,
            row: self.row,
        }
    }
}

/// A rectangle of cells on one sheet, corners normalised so `start <= end`
/// on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RangeRef {
    pub sheet: SheetId,
    pub start: Pos,
    pub end: Pos,
}

impl RangeRef {
    pub fn new(sheet: SheetId, a: Pos, b: Pos) -> RangeRef {
        RangeRef {
            sheet,
            start: Pos {
                col: a.col.min(b.col),
                row: a.row.min(b.row),
            },
            end: Pos {
                col: a.col.max(b.col),
                row: a.row.max(b.row),
            },
        }
    }

    pub fn single(cell: CellRef) -> RangeRef {
        RangeRef {
            sheet: cell.sheet,
            start: cell.pos(),
            end: cell.pos(),
        }
    }

    pub fn width(&self) -> u32 {
        self.end.col - self.start.col + 1
    }

    pub fn height(&self) -> u32 {
        self.end.row - self.start.row + 1
    }

    pub fn len(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, cell: CellRef) -> bool {
        cell.sheet == self.sheet
            && (self.start.col..=self.end.col).contains(&cell.col)
            && (self.start.row..=self.end.row).contains(&cell.row)
    }

    /// Cell at a 0-based (row, column) offset from the top-left corner.
    pub fn at(&self, row_offset: u32, col_offset: u32) -> Option<CellRef> {
        (row_offset < self.height() && col_offset < self.width()).then(|| CellRef {
            sheet: self.sheet,
            col: self.start.col + col_offset,
            row: self.start.row + row_offset,
        })
    }

    /// Cells in row-major order (left to right, then top to bottom).
    pub fn cells(&self) -> impl Iterator<Item = CellRef> + '_ {
        let sheet = self.sheet;
        (self.start.row..=self.end.row).flat_map(move |row| {
            (self.start.col..=self.end.col).map(move |col| CellRef { sheet, col, row })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("invalid cell reference `{0}`")]
    Syntax(String),
    #[error("cell reference out of bounds (column {col}, row {row})")]
    OutOfBounds { col: u32, row: u32 },
    #[error("unknown sheet `{0}`")]
    UnknownSheet(String),
}

/// Parses an unqualified A1 reference. `$` absolute markers are accepted and
/// ignored.
pub fn parse_a1(text: &str) -> Result<Pos, AddressError> {
    let bad = || AddressError::Syntax(String::from(text));
    let bytes = text.as_bytes();
    let mut i = 0;
    if bytes.get(i) == Some(&b'$') {
        i += 1;
    }
    let col_start = i;
    let mut col: u64 = 0;
    while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
        col = col * 26 + u64::from(bytes[i].to_ascii_uppercase() - b'A' + 1);
        i += 1;
        if i - col_start > 3 {
            return Err(bad());
        }
    }
    if i == col_start {
        return Err(bad());
    }
    if bytes.get(i) == Some(&b'$') {
        i += 1;
    }
    let row_start = i;
    let mut row: u64 = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        row = row * 10 + u64::from(bytes[i] - b'0');
        i += 1;
        if i - row_start > 7 {
            return Err(bad());
        }
    }
    if i == row_start || i != bytes.len() || bytes[row_start] == b'0' {
        return Err(bad());
    }
    Pos::new(col as u32, row as u32)
}

/// Parses `A1` or `A1:B3` (unqualified) into corner positions.
pub fn parse_area(text: &str) -> Result<(Pos, Pos), AddressError> {
    match text.split_once(':') {
        Some((a, b)) => Ok((parse_a1(a)?, parse_a1(b)?)),
        None => {
            let p = parse_a1(text)?;
            Ok((p, p))
        }
    }
}

/// Splits `Sheet!A1`, `'My sheet'!A1:B2` into (sheet name, area text).
pub fn split_qualified(text: &str) -> Option<(String, &str)> {
    let bang = text.rfind('!')?;
    let (sheet, rest) = (&text[..bang], &text[bang + 1..]);
    let sheet = if let Some(inner) = sheet.strip_prefix('\'').and_then(|s| s.strip_suffix('\'')) {
        inner.replace("''", "'")
    } else {
        String::from(sheet)
    };
    if sheet.is_empty() {
        return None;
    }
    Some((sheet, rest))
}

/// Renders a sheet name for use in a qualified reference, quoting when needed.
pub fn quote_sheet(name: &str) -> String {
    let plain = name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && parse_a1(name).is_err();
    if plain {
        String::from(name)
    } else {
        alloc::format!("'{}'", name.replace('\'', "''"))
    }
}

pub fn column_name(col: u32) -> String {
    struct Col(u32);
    impl fmt::Display for Col {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            write_column(f, self.0)
        }
    }
    alloc::format!("{}", Col(col))
}

fn write_column(f: &mut fmt::Formatter<'_>, mut col: u32) -> fmt::Result {
    let mut buf = [0u8; 4];
    let mut n = 0;
    while col > 0 {
        let rem = (col - 1) % 26;
        buf[n] = b'A' + rem as u8;
        n += 1;
        col = (col - 1) / 26;
    }
    for &b in buf[..n].iter().rev() {
        write!(f, "{}", b as char)?;
    }
    Ok(())
}
