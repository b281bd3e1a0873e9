//! Dependency graph over formula cells.
//!
//! Edges run from a precedent cell to the formula cells that read it. Ranges
//! count as reading every covered cell. Small ranges are expanded into the
//! per-cell reader index; very large ones are kept as rectangles and scanned,
//! which keeps whole-sheet references from allocating millions of entries.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use super::parser::RefItem;
use crate::address::{CellRef, RangeRef};
use crate::workbook::{FormulaCell, FormulaId};

const EXPAND_LIMIT: u64 = 4096;
const CYCLIC: u32 = u32::MAX;

#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    nodes: Vec<CellRef>,
    index: BTreeMap<CellRef, FormulaId>,
    readers: BTreeMap<CellRef, Vec<FormulaId>>,
    wide_readers: Vec<(RangeRef, FormulaId)>,
    /// formula -> formulas that read it
    dependents: Vec<Vec<FormulaId>>,
    order: Vec<FormulaId>,
    /// topological position, `CYCLIC` for cells on or below a cycle
    position: Vec<u32>,
}

impl DependencyGraph {
    pub(crate) fn build(formulas: &[FormulaCell]) -> DependencyGraph {
        let nodes: Vec<CellRef> = formulas.iter().map(|f| f.at).collect();
        let index: BTreeMap<CellRef, FormulaId> = nodes
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, FormulaId(i as u32)))
            .collect();

        let mut readers: BTreeMap<CellRef, Vec<FormulaId>> = BTreeMap::new();
        let mut wide_readers = Vec::new();
        for (i, f) in formulas.iter().enumerate() {
            let id = FormulaId(i as u32);
            let Ok(expr) = &f.expr else { continue };
            expr.for_each_ref(&mut |item| match item {
                RefItem::Cell(c) => readers.entry(c).or_default().push(id),
                RefItem::Range(r) if r.len() <= EXPAND_LIMIT => {
                    for c in r.cells() {
                        readers.entry(c).or_default().push(id);
                    }
                }
                RefItem::Range(r) => wide_readers.push((r, id)),
            });
        }
        for list in readers.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        wide_readers.sort_unstable();
        wide_readers.dedup();

        let mut dependents: Vec<Vec<FormulaId>> = vec![Vec::new(); nodes.len()];
        for (i, at) in nodes.iter().enumerate() {
            let mut deps: Vec<FormulaId> = readers.get(at).cloned().unwrap_or_default();
            deps.extend(
                wide_readers
                    .iter()
                    .filter(|(r, _)| r.contains(*at))
                    .map(|(_, f)| *f),
            );
            deps.sort_unstable();
            deps.dedup();
            dependents[i] = deps;
        }

        // Kahn's algorithm; whatever is left over sits on a cycle or
        // downstream of one.
        let mut indegree = vec![0usize; nodes.len()];
        for deps in &dependents {
            for d in deps {
                indegree[d.index()] += 1;
            }
        }
        let mut queue: VecDeque<FormulaId> = (0..nodes.len())
            .filter(|&i| indegree[i] == 0)
            .map(|i| FormulaId(i as u32))
            .collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(f) = queue.pop_front() {
            order.push(f);
            for d in &dependents[f.index()] {
                indegree[d.index()] -= 1;
                if indegree[d.index()] == 0 {
                    queue.push_back(*d);
                }
            }
        }
        let mut position = vec![CYCLIC; nodes.len()];
        for (p, f) in order.iter().enumerate() {
            position[f.index()] = p as u32;
        }

        DependencyGraph {
            nodes,
            index,
            readers,
            wide_readers,
            dependents,
            order,
            position,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Acyclic formula cells in evaluation order.
    pub fn order(&self) -> impl Iterator<Item = CellRef> + '_ {
        self.order.iter().map(|f| self.nodes[f.index()])
    }

    /// Formula cells on a reference cycle or depending on one.
    pub fn cyclic(&self) -> BTreeSet<CellRef> {
        self.position
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == CYCLIC)
            .map(|(i, _)| self.nodes[i])
            .collect()
    }

    pub fn is_cyclic(&self, cell: CellRef) -> bool {
        self.index
            .get(&cell)
            .is_some_and(|f| self.position[f.index()] == CYCLIC)
    }

    /// Formula cells that directly read `cell`.
    pub fn direct_dependents(&self, cell: CellRef) -> Vec<CellRef> {
        self.readers_of(cell)
            .into_iter()
            .map(|f| self.nodes[f.index()])
            .collect()
    }

    /// Every formula cell that transitively depends on any of `dirty`
    /// (including dirty formula cells themselves), in evaluation order with
    /// cyclic cells last.
    pub fn dependent_closure(&self, dirty: impl IntoIterator<Item = CellRef>) -> Vec<CellRef> {
        self.closure_ids(dirty)
            .into_iter()
            .map(|f| self.nodes[f.index()])
            .collect()
    }

    pub(crate) fn formula_id(&self, cell: CellRef) -> Option<FormulaId> {
        self.index.get(&cell).copied()
    }

    pub(crate) fn is_cyclic_id(&self, f: FormulaId) -> bool {
        self.position[f.index()] == CYCLIC
    }

    pub(crate) fn order_ids(&self) -> &[FormulaId] {
        &self.order
    }

    fn readers_of(&self, cell: CellRef) -> Vec<FormulaId> {
        let mut out: Vec<FormulaId> = self.readers.get(&cell).cloned().unwrap_or_default();
        out.extend(
            self.wide_readers
                .iter()
                .filter(|(r, _)| r.contains(cell))
                .map(|(_, f)| *f),
        );
        out
    }

    pub(crate) fn closure_ids(&self, dirty: impl IntoIterator<Item = CellRef>) -> Vec<FormulaId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = Vec::new();
        let mut visit = |f: FormulaId, stack: &mut Vec<FormulaId>| {
            if !seen[f.index()] {
                seen[f.index()] = true;
                stack.push(f);
            }
        };
        for cell in dirty {
            if let Some(f) = self.formula_id(cell) {
                visit(f, &mut stack);
            }
            for f in self.readers_of(cell) {
                visit(f, &mut stack);
            }
        }
        let mut out = Vec::new();
        while let Some(f) = stack.pop() {
            out.push(f);
            for d in &self.dependents[f.index()] {
                visit(*d, &mut stack);
            }
        }
        out.sort_unstable_by_key(|f| (self.position[f.index()], f.0));
        out
    }
}
