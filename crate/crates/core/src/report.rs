//! Report content: template blocks resolved against output values, and the
//! aggregate-to-template injection. Rendering to HTML happens in the
//! `wrapsheet` crate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::address::RangeRef;
use crate::pipeline::{OutputValue, Outputs, PreparedApp};
use crate::schema::{is_placeholder_char, ReportBlock, ReportTemplate};
use crate::submission::AggregateTable;
use crate::value::CellValue;
use crate::workbook::{BindingError, Workbook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub title: String,
    pub blocks: Vec<ReportContent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportContent {
    Text {
        text: String,
    },
    Table {
        output: String,
        header: Vec<String>,
        rows: Vec<Vec<CellValue>>,
    },
    Chart {
        output: String,
        data: ChartData,
    },
}

/// Series data for a chart: one value per category per series, `None` where
/// the cell is not a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Resolves every block of `template` against `outputs`.
pub fn build_report(template: &ReportTemplate, outputs: &Outputs) -> ReportModel {
    let blocks = template
        .blocks
        .iter()
        .map(|block| match block {
            ReportBlock::Text { text } => ReportContent::Text {
                text: substitute(text, outputs),
            },
            ReportBlock::Table { output, header } => ReportContent::Table {
                output: output.clone(),
                header: header.clone(),
                rows: rows_of(outputs.get(output)),
            },
            ReportBlock::Chart {
                label,
                output,
                series,
            } => ReportContent::Chart {
                output: output.clone(),
                data: chart_data(label, series, &rows_of(outputs.get(output))),
            },
        })
        .collect();
    ReportModel {
        title: substitute(&template.title, outputs),
        blocks,
    }
}

fn rows_of(v: Option<&OutputValue>) -> Vec<Vec<CellValue>> {
    match v {
        Some(OutputValue::Table(rows)) => rows.clone(),
        Some(OutputValue::Scalar(v)) => alloc::vec![alloc::vec![v.clone()]],
        None => Vec::new(),
    }
}

fn chart_data(label: &str, names: &[String], rows: &[Vec<CellValue>]) -> ChartData {
    let width = rows.first().map_or(0, Vec::len);
    let categories = rows
        .iter()
        .map(|r| r.first().map(CellValue::display_text).unwrap_or_default())
        .collect();
    let series = (1..width.max(1))
        .map(|col| Series {
            name: names
                .get(col - 1)
                .cloned()
                .unwrap_or_else(|| format!("Series {col}")),
            values: rows.iter().map(|r| r.get(col).and_then(number)).collect(),
        })
        .collect();
    ChartData {
        label: label.to_string(),
        categories,
        series,
    }
}

fn number(v: &CellValue) -> Option<f64> {
    match v {
        CellValue::Number(n) => Some(*n),
        _ => None,
    }
}

/// Replaces `{output-id}` placeholders with the output's display text.
/// Placeholders naming no scalar output are left as written.
pub fn substitute(text: &str, outputs: &Outputs) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let len = after
            .find(|c: char| !is_placeholder_char(c))
            .unwrap_or(after.len());
        let name = &after[..len];
        match outputs.get(name) {
            Some(OutputValue::Scalar(v)) if len > 0 && after[len..].starts_with('}') => {
                out.push_str(&v.display_text());
                rest = &after[len + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InjectError {
    #[error("region too small: table needs {rows}x{cols} cells but the region holds {region_rows}x{region_cols}")]
    RegionTooSmall {
        rows: usize,
        cols: usize,
        region_rows: u32,
        region_cols: u32,
    },
    #[error("the app has no aggregate_report section")]
    NotConfigured,
    #[error(transparent)]
    Binding(#[from] BindingError),
}

/// Writes `table` into `region` row by row (group keys as text, then the
/// measure sums), clears the rest of the region and fully recalculates.
pub fn inject(
    template: &Workbook,
    region: RangeRef,
    table: &AggregateTable,
) -> Result<Workbook, InjectError> {
    let cols = table.keys.len() + table.measures.len();
    let rows = table.groups.len();
    if rows > region.height() as usize || cols > region.width() as usize {
        return Err(InjectError::RegionTooSmall {
            rows,
            cols,
            region_rows: region.height(),
            region_cols: region.width(),
        });
    }
    let mut edits = Vec::with_capacity(region.len() as usize);
    for i in 0..region.height() {
        for j in 0..region.width() {
            let at = region.at(i, j).expect("inside region");
            let value = match table.groups.get(i as usize) {
                Some(g) if (j as usize) < g.keys.len() => {
                    CellValue::Text(g.keys[j as usize].clone())
                }
                Some(g) if (j as usize) < cols => {
                    CellValue::number(g.sums[j as usize - g.keys.len()])
                }
                _ => CellValue::Blank,
            };
            edits.push((at, value));
        }
    }
    Ok(template.set_inputs(&edits)?.full_recalculate())
}

/// Injects `table` into the app's aggregate template and builds the
/// aggregate report from that workbook's outputs.
pub fn inject_and_report(
    app: &PreparedApp,
    table: &AggregateTable,
) -> Result<(ReportModel, Workbook), InjectError> {
    let cfg = app
        .definition()
        .aggregate_report
        .as_ref()
        .ok_or(InjectError::NotConfigured)?;
    let template = app.workbook(&cfg.wb).ok_or(InjectError::NotConfigured)?;
    let region = template
        .range_ref(&cfg.region)
        .map_err(|_| InjectError::NotConfigured)?;
    let filled = inject(template, region, table)?;
    let outputs = app.outputs_from(&cfg.wb, &filled);
    Ok((build_report(&cfg.report, &outputs), filled))
}
