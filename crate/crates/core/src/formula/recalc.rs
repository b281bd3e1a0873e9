//! Full and incremental recalculation.
//!
//! Both paths evaluate formula cells through the same routine in
//! topological order, so an incremental pass over the dirty closure yields
//! values bit-identical to a full pass.

use alloc::vec::Vec;

use super::eval::{evaluate, ValueView};
use crate::address::{CellRef, SheetId};
use crate::value::{CellValue, ErrorCode};
use crate::workbook::{Cell, FormulaId, Workbook, BLANK};

/// Counters from one recalculation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecalcStats {
    /// Formula cells whose expression was evaluated.
    pub evaluated: usize,
    /// Formula cells set to `#CYCLE!` without evaluation.
    pub cyclic: usize,
}

struct PassView<'a> {
    wb: &'a Workbook,
    values: &'a [CellValue],
}

impl ValueView for PassView<'_> {
    fn value(&self, cell: CellRef) -> &CellValue {
        match self
            .wb
            .cells
            .get(cell.sheet.index())
            .and_then(|m| m.get(&cell.pos()))
        {
            Some(Cell::Literal(v)) => v,
            Some(Cell::Formula(id)) => &self.values[id.index()],
            None => &BLANK,
        }
    }

    fn has_sheet(&self, sheet: SheetId) -> bool {
        sheet.index() < self.wb.sheets.len()
    }
}

fn run(wb: &Workbook, targets: &[FormulaId]) -> (Workbook, RecalcStats) {
    let mut values: Vec<CellValue> = wb.values.as_ref().clone();
    let mut stats = RecalcStats::default();
    let graph = &wb.program.graph;
    for &f in targets {
        let v = if graph.is_cyclic_id(f) {
            stats.cyclic += 1;
            CellValue::Error(ErrorCode::Cycle)
        } else {
            stats.evaluated += 1;
            match &wb.program.formulas[f.index()].expr {
                Ok(expr) => evaluate(
                    expr,
                    &PassView {
                        wb,
                        values: &values,
                    },
                ),
                Err(_) => CellValue::Error(ErrorCode::Value),
            }
        };
        values[f.index()] = v;
    }
    (wb.with_values(values), stats)
}

/// Recomputes exactly the transitive dependents of `dirty`.
///
/// `dirty` should hold the literal cells edited since `wb`'s formula values
/// were last brought up to date. Passing every cell is equivalent to
/// [`full_recalculate`].
pub fn recalculate(wb: &Workbook, dirty: impl IntoIterator<Item = CellRef>) -> Workbook {
    recalculate_with_stats(wb, dirty).0
}

pub fn recalculate_with_stats(
    wb: &Workbook,
    dirty: impl IntoIterator<Item = CellRef>,
) -> (Workbook, RecalcStats) {
    let targets = wb.program.graph.closure_ids(dirty);
    run(wb, &targets)
}

/// Evaluates every formula cell from scratch. The reference semantics for
/// [`recalculate`].
pub fn full_recalculate(wb: &Workbook) -> Workbook {
    full_recalculate_with_stats(wb).0
}

pub fn full_recalculate_with_stats(wb: &Workbook) -> (Workbook, RecalcStats) {
    let graph = &wb.program.graph;
    let mut targets: Vec<FormulaId> = graph.order_ids().to_vec();
    targets.extend(
        (0..wb.program.formulas.len() as u32)
            .map(FormulaId)
            .filter(|f| graph.is_cyclic_id(*f)),
    );
    run(wb, &targets)
}

impl Workbook {
    pub fn recalculate(&self, dirty: impl IntoIterator<Item = CellRef>) -> Workbook {
        recalculate(self, dirty)
    }

    pub fn full_recalculate(&self) -> Workbook {
        full_recalculate(self)
    }
}
