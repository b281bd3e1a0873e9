//! Self-contained HTML report documents.
//!
//! Tables are inline. Each chart becomes a
//! `<script type="application/json" class="chart-data">` block that the UI
//! draws. The whole model is also embedded as `id="report-data"`.

use std::fmt::Write as _;

use wrapsheet_core::report::{ReportContent, ReportModel};
use wrapsheet_core::CellValue;

pub fn render_html(model: &ReportModel) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(out, "<title>{}</title>", escape(&model.title));
    out.push_str("<style>table{border-collapse:collapse}td,th{border:1px solid #999;padding:2px 6px}td.num{text-align:right}td.err{color:#b00}</style>\n");
    out.push_str("</head>\n<body>\n");
    let _ = writeln!(out, "<h1>{}</h1>", escape(&model.title));
    for block in &model.blocks {
        match block {
            ReportContent::Text { text } => {
                for para in text.split("\n\n") {
                    let _ = writeln!(out, "<p>{}</p>", escape(para));
                }
            }
            ReportContent::Table {
                output,
                header,
                rows,
            } => {
                let _ = writeln!(out, "<table data-output=\"{}\">", escape(output));
                if !header.is_empty() {
                    out.push_str("<tr>");
                    for h in header {
                        let _ = write!(out, "<th>{}</th>", escape(h));
                    }
                    out.push_str("</tr>\n");
                }
                for row in rows {
                    out.push_str("<tr>");
                    for v in row {
                        let class = match v {
                            CellValue::Number(_) => " class=\"num\"",
                            CellValue::Error(_) => " class=\"err\"",
                            _ => "",
                        };
                        let _ = write!(out, "<td{class}>{}</td>", escape(&v.display_text()));
                    }
                    out.push_str("</tr>\n");
                }
                out.push_str("</table>\n");
            }
            ReportContent::Chart { output, data } => {
                let _ = writeln!(out, "<figure data-output=\"{}\">", escape(output));
                let _ = writeln!(out, "<figcaption>{}</figcaption>", escape(&data.label));
                let _ = writeln!(
                    out,
                    "<script type=\"application/json\" class=\"chart-data\">{}</script>",
                    script_json(&serde_json::to_string(data).expect("chart data serializes"))
                );
                out.push_str("</figure>\n");
            }
        }
    }
    let _ = writeln!(
        out,
        "<script type=\"application/json\" id=\"report-data\">{}</script>",
        script_json(&serde_json::to_string(model).expect("report serializes"))
    );
    out.push_str("</body>\n</html>\n");
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// JSON text safe inside a `<script>` element.
fn script_json(json: &str) -> String {
    json.replace('<', "\\u003c")
}

/// Pulls the chart-data blocks back out of a rendered report.
pub fn chart_blocks(html: &str) -> Vec<serde_json::Value> {
    let open = "<script type=\"application/json\" class=\"chart-data\">";
    html.split(open)
        .skip(1)
        .filter_map(|rest| rest.split("</script>").next())
        .filter_map(|json| serde_json::from_str(json).ok())
        .collect()
}

/// The embedded report model of a rendered report.
pub fn report_data(html: &str) -> Option<ReportModel> {
    let rest = html
        .split("<script type=\"application/json\" id=\"report-data\">")
        .nth(1)?;
    serde_json::from_str(rest.split("</script>").next()?).ok()
}
