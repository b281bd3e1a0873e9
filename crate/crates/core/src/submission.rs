//! Keyed submission rows and their aggregation across users.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{OutputValue, Outputs};
use crate::schema::SubmissionSchema;
use crate::value::CellValue;

/// One keyed row of a run's submission output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRow {
    pub keys: Vec<String>,
    pub measures: Vec<f64>,
}

/// Rows taken from a run, plus a note for every row that had to be skipped.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Extracted {
    pub rows: Vec<SubmissionRow>,
    pub flags: Vec<String>,
}

/// Reads the submission rows out of a run's outputs.
///
/// Rows whose key cells are all blank are ignored. A row with a
/// non-numeric measure, or repeating an earlier key tuple, is skipped and
/// flagged.
pub fn extract_rows(schema: &SubmissionSchema, outputs: &Outputs) -> Extracted {
    let mut out = Extracted::default();
    let Some(OutputValue::Table(table)) = outputs.get(&schema.output) else {
        out.flags
            .push(format!("submission output `{}` is missing", schema.output));
        return out;
    };
    let k = schema.keys.len();
    let mut seen = BTreeSet::new();
    for (i, row) in table.iter().enumerate() {
        if row.len() != schema.width() {
            out.flags.push(format!(
                "row {}: expected {} columns",
                i + 1,
                schema.width()
            ));
            continue;
        }
        if row[..k].iter().all(CellValue::is_blank) {
            continue;
        }
        let keys: Vec<String> = row[..k].iter().map(CellValue::display_text).collect();
        let mut measures = Vec::with_capacity(schema.measures.len());
        let mut bad = None;
        for (name, v) in schema.measures.iter().zip(&row[k..]) {
            match v {
                CellValue::Number(n) => measures.push(*n),
                other => {
                    bad = Some(format!("measure `{name}` is {}", describe(other)));
                    break;
                }
            }
        }
        if let Some(why) = bad {
            out.flags
                .push(format!("row {} ({}): {why}", i + 1, keys.join(", ")));
            continue;
        }
        if !seen.insert(keys.clone()) {
            out.flags.push(format!(
                "row {} ({}): duplicate key",
                i + 1,
                keys.join(", ")
            ));
            continue;
        }
        out.rows.push(SubmissionRow { keys, measures });
    }
    out
}

fn describe(v: &CellValue) -> String {
    match v {
        CellValue::Blank => "blank".to_string(),
        CellValue::Text(_) => "text".to_string(),
        CellValue::Bool(_) => "a boolean".to_string(),
        other => other.display_text(),
    }
}

/// A persisted submission row with the context needed for supersession.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRow {
    /// Run creation sequence; larger is newer.
    pub seq: u64,
    pub run_id: String,
    pub user: String,
    pub period: String,
    pub keys: BTreeMap<String, String>,
    pub measures: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateGroup {
    pub keys: Vec<String>,
    pub sums: Vec<f64>,
    /// Contributing rows.
    pub rows: usize,
    /// Distinct contributing users.
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub keys: Vec<String>,
    pub measures: Vec<String>,
    /// Sorted by key values.
    pub groups: Vec<AggregateGroup>,
    pub users: usize,
}

impl AggregateTable {
    /// Exactly rounded total of one measure over all groups.
    pub fn total(&self, measure: usize) -> f64 {
        exact_sum(self.groups.iter().map(|g| g.sums[measure]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AggregateError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
}

/// Groups the rows of one period by `keys` and sums `measures`.
///
/// Only each user's newest row per (key tuple, period) counts. Sums are
/// exactly rounded, so the result does not depend on row order.
pub fn aggregate(
    schema: &SubmissionSchema,
    rows: &[StoredRow],
    period: &str,
    keys: &[String],
    measures: &[String],
) -> Result<AggregateTable, AggregateError> {
    if let Some(k) = keys.iter().find(|k| !schema.keys.contains(k)) {
        return Err(AggregateError::UnknownKey(k.clone()));
    }
    if let Some(m) = measures.iter().find(|m| !schema.measures.contains(m)) {
        return Err(AggregateError::UnknownMeasure(m.clone()));
    }

    let mut latest: BTreeMap<(&str, Vec<&str>), &StoredRow> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.period == period) {
        let full_key: Vec<&str> = schema
            .keys
            .iter()
            .map(|k| row.keys.get(k).map_or("", String::as_str))
            .collect();
        let slot = latest.entry((row.user.as_str(), full_key)).or_insert(row);
        if (row.seq, &row.run_id) > (slot.seq, &slot.run_id) {
            *slot = row;
        }
    }

    // group key -> (values per measure, row count, users)
    type Acc<'a> = (Vec<Vec<f64>>, usize, BTreeSet<&'a str>);
    let mut groups: BTreeMap<Vec<String>, Acc<'_>> = BTreeMap::new();
    let mut users = BTreeSet::new();
    for row in latest.values() {
        let Some(values) = measures
            .iter()
            .map(|m| row.measures.get(m).copied())
            .collect::<Option<Vec<f64>>>()
        else {
            continue;
        };
        let key: Vec<String> = keys
            .iter()
            .map(|k| row.keys.get(k).cloned().unwrap_or_default())
            .collect();
        let g = groups
            .entry(key)
            .or_insert_with(|| (alloc::vec![Vec::new(); measures.len()], 0, BTreeSet::new()));
        for (acc, v) in g.0.iter_mut().zip(values) {
            acc.push(v);
        }
        g.1 += 1;
        g.2.insert(row.user.as_str());
        users.insert(row.user.as_str());
    }

    Ok(AggregateTable {
        keys: keys.to_vec(),
        measures: measures.to_vec(),
        groups: groups
            .into_iter()
            .map(|(keys, (values, rows, who))| AggregateGroup {
                keys,
                sums: values.into_iter().map(exact_sum).collect(),
                rows,
                users: who.len(),
            })
            .collect(),
        users: users.len(),
    })
}

/// Sum of `values` rounded once to the nearest `f64` (Shewchuk's
/// algorithm, as in Python's `math.fsum`).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for i in 0..partials.len() {
            let mut y = partials[i];
            if libm::fabs(x) < libm::fabs(y) {
                core::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round-half-even correction when the remaining partials push the
    // result across a rounding boundary.
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    if hi == 0.0 {
        0.0
    } else {
        hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn schema() -> SubmissionSchema {
        SubmissionSchema {
            output: "rows".to_string(),
            keys: vec!["scenario".to_string(), "risk_code".to_string()],
            measures: vec!["exposure".to_string()],
        }
    }

    fn outputs(rows: Vec<Vec<CellValue>>) -> Outputs {
        let mut o = Outputs::new();
        o.insert("rows".to_string(), OutputValue::Table(rows));
        o
    }

    fn row(s: &str, r: &str, v: CellValue) -> Vec<CellValue> {
        vec![CellValue::text(s), CellValue::text(r), v]
    }

    #[test]
    fn error_measure_is_skipped_and_flagged() {
        let ex = extract_rows(
            &schema(),
            &outputs(vec![
                row("S1", "RC-01", 1.0.into()),
                row("S1", "RC-02", crate::value::ErrorCode::DivZero.into()),
                vec![CellValue::Blank, CellValue::Blank, CellValue::Number(0.0)],
                row("S1", "RC-01", 3.0.into()),
            ]),
        );
        assert_eq!(
            ex.rows,
            [SubmissionRow {
                keys: vec!["S1".into(), "RC-01".into()],
                measures: vec![1.0]
            }]
        );
        assert_eq!(
            ex.flags,
            [
                "row 2 (S1, RC-02): measure `exposure` is #DIV/0!",
                "row 4 (S1, RC-01): duplicate key"
            ]
        );
    }

    fn stored(seq: u64, user: &str, s: &str, r: &str, v: f64) -> StoredRow {
        StoredRow {
            seq,
            run_id: format!("run{seq}"),
            user: user.to_string(),
            period: "P".to_string(),
            keys: [
                ("scenario".to_string(), s.to_string()),
                ("risk_code".to_string(), r.to_string()),
            ]
            .into(),
            measures: [("exposure".to_string(), v)].into(),
        }
    }

    #[test]
    fn newer_submission_supersedes_within_user_and_period() {
        let rows = vec![
            stored(1, "u1", "S1", "RC-01", 10.0),
            stored(2, "u2", "S1", "RC-01", 5.0),
            stored(3, "u1", "S1", "RC-01", 7.0),
            StoredRow {
                period: "Q".to_string(),
                ..stored(4, "u1", "S1", "RC-01", 100.0)
            },
        ];
        let t = aggregate(
            &schema(),
            &rows,
            "P",
            &["scenario".into()],
            &["exposure".into()],
        )
        .unwrap();
        assert_eq!(t.groups.len(), 1);
        assert_eq!(t.groups[0].sums, [12.0]);
        assert_eq!((t.groups[0].rows, t.groups[0].users, t.users), (2, 2, 2));
    }

    #[test]
    fn unknown_names_are_rejected() {
        let err = aggregate(&schema(), &[], "P", &["region".into()], &[]).unwrap_err();
        assert_eq!(err, AggregateError::UnknownKey("region".into()));
        let err = aggregate(&schema(), &[], "P", &[], &["premium".into()]).unwrap_err();
        assert_eq!(err, AggregateError::UnknownMeasure("premium".into()));
    }

    #[test]
    fn exact_sum_cancels_without_loss() {
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([]), 0.0);
        assert_eq!(exact_sum([-0.0]).to_bits(), 0.0f64.to_bits());
    }
}
