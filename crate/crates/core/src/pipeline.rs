//! The run pipeline shared by the service and local runs: typed edits are
//! written into the bound cells, links carry values between workbooks, each
//! workbook is recalculated incrementally and the bound outputs are read
//! back.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::address::CellRef;
use crate::formula::{recalculate_with_stats, RecalcStats};
use crate::schema::{
    self, AppDefinition, FieldErrors, Issue, RawValue, Resolved, ResolvedBindings, TypedEdit,
};
use crate::value::CellValue;
use crate::workbook::{BindingError, Workbook};

/// The value of one bound output: a single cell or the rows of a range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutputValue {
    Table(Vec<Vec<CellValue>>),
    Scalar(CellValue),
}

impl OutputValue {
    /// Bit-level equality, cell by cell.
    pub fn bit_eq(&self, other: &OutputValue) -> bool {
        match (self, other) {
            (OutputValue::Scalar(a), OutputValue::Scalar(b)) => a.bit_eq(b),
            (OutputValue::Table(a), OutputValue::Table(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| {
                        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.bit_eq(q))
                    })
            }
            _ => false,
        }
    }
}

pub type Outputs = BTreeMap<String, OutputValue>;

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outputs: Outputs,
    /// Final snapshot of every workbook, keyed by workbook id.
    pub workbooks: BTreeMap<String, Workbook>,
    pub stats: RecalcStats,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("workbook `{0}` is not loaded")]
    MissingWorkbook(String),
    #[error("no binding for input `{0}`")]
    UnboundInput(String),
    #[error("workbook `{wb}`: {source}")]
    Binding { wb: String, source: BindingError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("invalid inputs")]
    Fields(FieldErrors),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// A definition checked against its workbooks, with every workbook fully
/// calculated once so runs only recompute what their inputs touch.
#[derive(Debug, Clone)]
pub struct PreparedApp {
    def: AppDefinition,
    resolved: ResolvedBindings,
    base: BTreeMap<String, Workbook>,
}

impl PreparedApp {
    pub fn new(
        def: AppDefinition,
        workbooks: BTreeMap<String, Workbook>,
    ) -> Result<PreparedApp, Vec<Issue>> {
        let (resolved, issues) = schema::resolve(&def, &workbooks);
        if !issues.is_empty() {
            return Err(issues);
        }
        let base = workbooks
            .into_iter()
            .map(|(id, wb)| (id, wb.full_recalculate()))
            .collect();
        Ok(PreparedApp {
            def,
            resolved,
            base,
        })
    }

    pub fn definition(&self) -> &AppDefinition {
        &self.def
    }

    /// The calculated workbook for `id`, before any run edits.
    pub fn workbook(&self, id: &str) -> Option<&Workbook> {
        self.base.get(id)
    }

    pub fn output_target(&self, id: &str) -> Option<&Resolved> {
        self.resolved.outputs.get(id)
    }

    pub fn input_cell(&self, component: &str) -> Option<(&str, CellRef)> {
        self.resolved
            .inputs
            .get(component)
            .map(|(wb, at)| (wb.as_str(), *at))
    }

    pub fn validate_inputs(
        &self,
        raw: &BTreeMap<String, RawValue>,
    ) -> Result<Vec<TypedEdit>, FieldErrors> {
        schema::validate_inputs(&self.def, raw)
    }

    pub fn execute(&self, edits: &[TypedEdit]) -> Result<RunResult, PipelineError> {
        run_resolved(&self.resolved, &self.base, edits)
    }

    /// Validation followed by execution.
    pub fn run(&self, raw: &BTreeMap<String, RawValue>) -> Result<RunResult, RunError> {
        let edits = self.validate_inputs(raw).map_err(RunError::Fields)?;
        Ok(self.execute(&edits)?)
    }

    /// Reads every output bound to workbook `wb_id` from `wb`.
    pub fn outputs_from(&self, wb_id: &str, wb: &Workbook) -> Outputs {
        self.resolved
            .outputs
            .iter()
            .filter(|(_, r)| r.wb == wb_id)
            .map(|(id, r)| (id.clone(), read_output(wb, r)))
            .collect()
    }
}

pub(crate) fn run_resolved(
    resolved: &ResolvedBindings,
    base: &BTreeMap<String, Workbook>,
    edits: &[TypedEdit],
) -> Result<RunResult, PipelineError> {
    let mut pending: BTreeMap<&str, Vec<(CellRef, CellValue)>> = BTreeMap::new();
    for edit in edits {
        let (wb, at) = resolved
            .inputs
            .get(&edit.component)
            .ok_or_else(|| PipelineError::UnboundInput(edit.component.clone()))?;
        pending
            .entry(wb.as_str())
            .or_default()
            .push((*at, edit.value.clone()));
    }

    let mut done: BTreeMap<String, Workbook> = BTreeMap::new();
    let mut stats = RecalcStats::default();
    for id in &resolved.order {
        let wb = base
            .get(id)
            .ok_or_else(|| PipelineError::MissingWorkbook(id.clone()))?;
        let mut cells = pending.remove(id.as_str()).unwrap_or_default();
        for (from, to) in resolved.links.iter().filter(|(_, to)| &to.wb == id) {
            let source = done
                .get(&from.wb)
                .ok_or_else(|| PipelineError::MissingWorkbook(from.wb.clone()))?;
            for (src, dst) in from.range.cells().zip(to.range.cells()) {
                cells.push((dst, source.value(src).clone()));
            }
        }
        let edited = wb
            .set_inputs(&cells)
            .map_err(|source| PipelineError::Binding {
                wb: id.clone(),
                source,
            })?;
        let (calculated, s) = recalculate_with_stats(&edited, cells.iter().map(|(at, _)| *at));
        stats.evaluated += s.evaluated;
        stats.cyclic += s.cyclic;
        done.insert(id.clone(), calculated);
    }

    let outputs = resolved
        .outputs
        .iter()
        .map(|(id, r)| (id.clone(), read_output(&done[&r.wb], r)))
        .collect();
    Ok(RunResult {
        outputs,
        workbooks: done,
        stats,
    })
}

fn read_output(wb: &Workbook, r: &Resolved) -> OutputValue {
    if r.single {
        return OutputValue::Scalar(wb.value(r.range.at(0, 0).expect("non-empty range")).clone());
    }
    let rows = (0..r.range.height())
        .map(|i| {
            (0..r.range.width())
                .map(|j| wb.value(r.range.at(i, j).expect("in range")).clone())
                .collect()
        })
        .collect();
    OutputValue::Table(rows)
}

/// Hex SHA-256 of the canonical encoding of typed inputs, for audit records.
pub fn input_digest(edits: &[TypedEdit]) -> String {
    let mut sorted: Vec<&TypedEdit> = edits.iter().collect();
    sorted.sort_by(|a, b| a.component.cmp(&b.component));
    let mut h = Sha256::new();
    let put = |h: &mut Sha256, bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    for e in sorted {
        put(&mut h, e.component.as_bytes());
        match &e.value {
            CellValue::Number(n) => {
                h.update(b"n");
                h.update(n.to_bits().to_le_bytes());
            }
            CellValue::Text(t) => {
                h.update(b"t");
                put(&mut h, t.as_bytes());
            }
            CellValue::Bool(b) => h.update([b'b', u8::from(*b)]),
            CellValue::Blank => h.update(b"_"),
            CellValue::Error(code) => {
                h.update(b"e");
                put(&mut h, code.as_str().as_bytes());
            }
        }
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        out.push(char::from_digit(u32::from(b >> 4), 16).unwrap_or('0'));
        out.push(char::from_digit(u32::from(b & 0xf), 16).unwrap_or('0'));
    }
    out
}
