//! Checks a definition against the workbooks it binds to.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::definition::{AppDefinition, CellTarget, Display, Issue};
use crate::address::{CellRef, RangeRef};
use crate::pipeline::{self, OutputValue};
use crate::value::CellValue;
use crate::workbook::Workbook;

/// A cell or range target resolved against its workbook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub wb: String,
    pub range: RangeRef,
    /// Bound with `cell` rather than `range`.
    pub single: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ResolvedBindings {
    pub inputs: BTreeMap<String, (String, CellRef)>,
    pub outputs: BTreeMap<String, Resolved>,
    pub links: Vec<(Resolved, Resolved)>,
    /// Workbook ids in link order: every link source comes before its target.
    pub order: Vec<String>,
}

/// Every problem that would make the definition unpublishable; empty when
/// it can be published. `workbooks` maps the definition's workbook ids to
/// the loaded workbooks.
pub fn validate_definition(
    def: &AppDefinition,
    workbooks: &BTreeMap<String, Workbook>,
) -> Vec<Issue> {
    resolve(def, workbooks).1
}

pub(crate) fn resolve(
    def: &AppDefinition,
    workbooks: &BTreeMap<String, Workbook>,
) -> (ResolvedBindings, Vec<Issue>) {
    let mut issues = def.check();
    let mut out = ResolvedBindings::default();

    for id in def.workbooks.keys() {
        if !workbooks.contains_key(id) {
            issues.push(Issue::new(
                format!("workbooks.{id}"),
                format!("workbook `{id}` is not loaded"),
            ));
        }
    }
    let book = |path: &str, id: &str, issues: &mut Vec<Issue>| -> Option<&Workbook> {
        let found = def
            .workbooks
            .contains_key(id)
            .then(|| workbooks.get(id))
            .flatten();
        if found.is_none() && !def.workbooks.contains_key(id) {
            issues.push(Issue::new(path, format!("unknown workbook id `{id}`")));
        }
        found
    };

    // inputs
    let mut input_components = BTreeMap::new();
    def.ui.walk("ui", &mut |path, c| {
        if c.kind.is_input() {
            input_components.insert(c.id.as_str(), path.to_string());
        }
    });
    let mut written: BTreeMap<(String, CellRef), String> = BTreeMap::new();
    for (cid, binding) in &def.bindings.inputs {
        let path = format!("bindings.inputs.{cid}");
        match def.ui.find(cid) {
            None => issues.push(Issue::new(
                path.clone(),
                format!("no component with id `{cid}`"),
            )),
            Some(c) if !c.kind.is_input() => issues.push(Issue::new(
                path.clone(),
                format!(
                    "component `{cid}` is a {} and takes no input",
                    c.kind.as_str()
                ),
            )),
            Some(_) => {}
        }
        let Some(wb) = book(&format!("{path}.wb"), &binding.wb, &mut issues) else {
            continue;
        };
        match wb.cell_ref(&binding.cell) {
            Err(e) => issues.push(Issue::new(format!("{path}.cell"), e.to_string())),
            Ok(at) if wb.is_formula(at) => issues.push(Issue::new(
                format!("{path}.cell"),
                format!("input binding targets formula cell {}", binding.cell),
            )),
            Ok(at) => {
                if let Some(other) = written.insert((binding.wb.clone(), at), path.clone()) {
                    issues.push(Issue::new(
                        path.clone(),
                        format!("cell {} is also written by {other}", binding.cell),
                    ));
                }
                out.inputs.insert(cid.clone(), (binding.wb.clone(), at));
            }
        }
    }
    for (cid, path) in &input_components {
        if !def.bindings.inputs.contains_key(*cid) {
            issues.push(Issue::new(
                path.clone(),
                format!("input component `{cid}` has no binding"),
            ));
        }
    }

    // outputs
    for (oid, target) in &def.bindings.outputs {
        let path = format!("bindings.outputs.{oid}");
        if let Some(r) = resolve_target(
            &path,
            target,
            book(&format!("{path}.wb"), &target.wb, &mut issues),
            &mut issues,
        ) {
            out.outputs.insert(oid.clone(), r);
        }
    }
    def.ui.walk("ui", &mut |path, c| {
        let Some(oid) = &c.output else { return };
        match out.outputs.get(oid) {
            None if !def.bindings.outputs.contains_key(oid) => issues.push(Issue::new(
                format!("{path}.output"),
                format!("no output binding named `{oid}`"),
            )),
            Some(r) if c.display.unwrap_or_default() == Display::Scalar && r.range.len() > 1 => {
                issues.push(Issue::new(
                    format!("{path}.display"),
                    format!("output `{oid}` is a range; use display `table`"),
                ))
            }
            _ => {}
        }
    });

    // links
    for (i, link) in def.bindings.links.iter().enumerate() {
        let path = format!("bindings.links[{i}]");
        let from = resolve_target(
            &format!("{path}.from"),
            &link.from,
            book(&format!("{path}.from.wb"), &link.from.wb, &mut issues),
            &mut issues,
        );
        let to_book = book(&format!("{path}.to.wb"), &link.to.wb, &mut issues);
        let to = resolve_target(&format!("{path}.to"), &link.to, to_book, &mut issues);
        let (Some(from), Some(to)) = (from, to) else {
            continue;
        };
        if (from.range.height(), from.range.width()) != (to.range.height(), to.range.width()) {
            issues.push(Issue::new(
                path.clone(),
                "link source and target differ in shape",
            ));
            continue;
        }
        let wb = to_book.expect("resolved target has a workbook");
        for cell in to.range.cells() {
            if wb.is_formula(cell) {
                issues.push(Issue::new(
                    format!("{path}.to"),
                    format!("link targets formula cell {}", wb.format_ref(cell)),
                ));
                break;
            }
            if let Some(other) = written.insert((to.wb.clone(), cell), format!("{path}.to")) {
                issues.push(Issue::new(
                    format!("{path}.to"),
                    format!("cell {} is also written by {other}", wb.format_ref(cell)),
                ));
                break;
            }
        }
        out.links.push((from, to));
    }
    match link_order(def.workbooks.keys(), &out.links) {
        Ok(order) => out.order = order,
        Err(wb) => issues.push(Issue::new(
            "bindings.links",
            format!("links form a cycle through workbook `{wb}`"),
        )),
    }

    // report
    if let Some(report) = &def.report {
        check_report_refs(
            "report",
            report.referenced_outputs(),
            &out,
            None,
            &mut issues,
        );
    }

    // submission
    if let Some(sub) = &def.submission {
        match out.outputs.get(&sub.output) {
            None => {
                if !def.bindings.outputs.contains_key(&sub.output) {
                    issues.push(Issue::new(
                        "submission.output",
                        format!("no output binding named `{}`", sub.output),
                    ));
                }
            }
            Some(r) if r.single => issues.push(Issue::new(
                "submission.output",
                "submission output must be a range",
            )),
            Some(r) if r.range.width() as usize != sub.width() => issues.push(Issue::new(
                "submission.output",
                format!(
                    "range has {} columns but keys and measures need {}",
                    r.range.width(),
                    sub.width()
                ),
            )),
            Some(_) => {}
        }
    }

    // aggregate report
    if let Some(agg) = &def.aggregate_report {
        if def.submission.is_none() {
            issues.push(Issue::new(
                "aggregate_report",
                "aggregate_report needs a submission schema",
            ));
        }
        if let Some(wb) = book("aggregate_report.wb", &agg.wb, &mut issues) {
            match wb.range_ref(&agg.region) {
                Err(e) => issues.push(Issue::new("aggregate_report.region", e.to_string())),
                Ok(region) => {
                    if let Some(cell) = region.cells().find(|c| wb.is_formula(*c)) {
                        issues.push(Issue::new(
                            "aggregate_report.region",
                            format!("region contains formula cell {}", wb.format_ref(cell)),
                        ));
                    }
                    if let Some(sub) = &def.submission {
                        if (region.width() as usize) < sub.width() {
                            issues.push(Issue::new(
                                "aggregate_report.region",
                                format!(
                                    "region has {} columns but the aggregate table needs {}",
                                    region.width(),
                                    sub.width()
                                ),
                            ));
                        }
                    }
                }
            }
        }
        check_report_refs(
            "aggregate_report.report",
            agg.report.referenced_outputs(),
            &out,
            Some(&agg.wb),
            &mut issues,
        );
    }

    // Measures must be numeric at the workbooks' own values.
    if issues.is_empty() {
        if let Some(sub) = &def.submission {
            let base: BTreeMap<String, Workbook> = workbooks
                .iter()
                .map(|(k, wb)| (k.clone(), wb.full_recalculate()))
                .collect();
            match pipeline::run_resolved(&out, &base, &[]) {
                Ok(result) => {
                    if let Some(OutputValue::Table(rows)) = result.outputs.get(&sub.output) {
                        check_measures(sub, rows, &mut issues);
                    }
                }
                Err(e) => issues.push(Issue::new("bindings", e.to_string())),
            }
        }
    }

    (out, issues)
}

fn resolve_target(
    path: &str,
    t: &CellTarget,
    wb: Option<&Workbook>,
    issues: &mut Vec<Issue>,
) -> Option<Resolved> {
    let wb = wb?;
    let (field, parsed) = match (&t.cell, &t.range) {
        (Some(cell), None) => ("cell", wb.cell_ref(cell).map(RangeRef::single)),
        (None, Some(range)) => ("range", wb.range_ref(range)),
        _ => return None,
    };
    match parsed {
        Ok(range) => Some(Resolved {
            wb: t.wb.clone(),
            range,
            single: t.cell.is_some(),
        }),
        Err(e) => {
            issues.push(Issue::new(format!("{path}.{field}"), e.to_string()));
            None
        }
    }
}

fn check_report_refs(
    prefix: &str,
    refs: Vec<(String, String, bool)>,
    resolved: &ResolvedBindings,
    only_wb: Option<&str>,
    issues: &mut Vec<Issue>,
) {
    for (path, oid, wants_range) in refs {
        let path = format!("{prefix}.{path}");
        match resolved.outputs.get(&oid) {
            None => issues.push(Issue::new(
                path,
                format!("placeholder `{oid}` has no matching output"),
            )),
            Some(r) if only_wb.is_some_and(|wb| wb != r.wb) => issues.push(Issue::new(
                path,
                format!(
                    "output `{oid}` is not bound to workbook `{}`",
                    only_wb.unwrap_or("")
                ),
            )),
            Some(r) if !wants_range && r.range.len() > 1 => issues.push(Issue::new(
                path,
                format!("output `{oid}` is a range and cannot be placed in text"),
            )),
            Some(_) => {}
        }
    }
}

fn check_measures(sub: &super::SubmissionSchema, rows: &[Vec<CellValue>], issues: &mut Vec<Issue>) {
    let k = sub.keys.len();
    for (r, row) in rows.iter().enumerate() {
        if row[..k].iter().all(CellValue::is_blank) {
            continue;
        }
        for (m, name) in sub.measures.iter().enumerate() {
            let v = &row[k + m];
            if !matches!(v, CellValue::Number(_)) {
                issues.push(Issue::new(
                    "submission.measures",
                    format!(
                        "measure `{name}` in row {} is not numeric ({})",
                        r + 1,
                        describe(v)
                    ),
                ));
            }
        }
    }
}

fn describe(v: &CellValue) -> String {
    match v {
        CellValue::Blank => "blank".to_string(),
        CellValue::Text(t) => format!("text \"{t}\""),
        other => other.display_text(),
    }
}

/// Kahn's algorithm over workbook ids; `Err` names a workbook on a cycle.
fn link_order<'a>(
    ids: impl Iterator<Item = &'a String>,
    links: &[(Resolved, Resolved)],
) -> Result<Vec<String>, String> {
    let ids: Vec<&String> = ids.collect();
    let mut edges: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (from, to) in links {
        edges.insert((from.wb.as_str(), to.wb.as_str()));
    }
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|id| (id.as_str(), 0)).collect();
    for (_, to) in &edges {
        *indegree.entry(to).or_default() += 1;
    }
    let mut queue: VecDeque<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::new();
    while let Some(id) = queue.pop_front() {
        order.push(id.to_string());
        for (_, to) in edges.iter().filter(|(from, _)| *from == id) {
            let d = indegree.get_mut(to).expect("edge target counted");
            *d -= 1;
            if *d == 0 {
                queue.push_back(to);
            }
        }
    }
    match indegree
        .iter()
        .find(|(id, d)| **d > 0 && !order.iter().any(|o| o == *id))
    {
        Some((id, _)) => Err(id.to_string()),
        None => Ok(order),
    }
}
