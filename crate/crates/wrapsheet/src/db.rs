//! Runs, audit records and submission rows in one SQLite file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};
use wrapsheet_core::submission::{StoredRow, SubmissionRow};
use wrapsheet_core::{Outputs, RawValue};

/// UTC timestamp with millisecond precision; sorts as text.
pub fn now() -> String {
    chrono::Utc::now()
        .format("%Y-%m-%dT%H:%M:%S%.3fZ")
        .to_string()
}

/// Normalizes an RFC 3339 timestamp to the stored form.
pub fn normalize_time(text: &str) -> Option<String> {
    let t = chrono::DateTime::parse_from_rfc3339(text).ok()?;
    Some(
        t.with_timezone(&chrono::Utc)
            .format("%Y-%m-%dT%H:%M:%S%.3fZ")
            .to_string(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Queued,
    Running,
    Completed,
    Failed,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Queued => "QUEUED",
            Status::Running => "RUNNING",
            Status::Completed => "COMPLETED",
            Status::Failed => "FAILED",
        }
    }

    fn parse(s: &str) -> Status {
        match s {
            "QUEUED" => Status::Queued,
            "RUNNING" => Status::Running,
            "COMPLETED" => Status::Completed,
            _ => Status::Failed,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Completed | Status::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Creation order.
    pub seq: i64,
    pub id: String,
    pub user: String,
    pub app: String,
    pub revision: u32,
    pub period: String,
    pub inputs: BTreeMap<String, RawValue>,
    pub input_digest: String,
    pub status: Status,
    pub outputs: Option<Outputs>,
    pub failure: Option<String>,
    pub flags: Vec<String>,
    pub enqueued_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    /// Completion order among terminal runs.
    pub finish_seq: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Publish,
    Restore,
    RunCreated,
    RunCompleted,
    RunFailed,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Publish => "publish",
            Action::Restore => "restore",
            Action::RunCreated => "run-created",
            Action::RunCompleted => "run-completed",
            Action::RunFailed => "run-failed",
        }
    }

    fn parse(s: &str) -> Action {
        match s {
            "publish" => Action::Publish,
            "restore" => Action::Restore,
            "run-created" => Action::RunCreated,
            "run-completed" => Action::RunCompleted,
            _ => Action::RunFailed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: i64,
    pub at: String,
    pub user: String,
    pub action: Action,
    pub app: String,
    pub revision: u32,
    pub run_id: Option<String>,
    pub input_digest: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditFilter {
    pub user: Option<String>,
    pub app: Option<String>,
    /// Inclusive bounds, RFC 3339.
    pub from: Option<String>,
    pub to: Option<String>,
}

/// How a run ended.
pub enum Terminal {
    Completed {
        outputs: Outputs,
        flags: Vec<String>,
        rows: Vec<SubmissionRow>,
        keys: Vec<String>,
        measures: Vec<String>,
    },
    Failed(String),
}

pub struct Db {
    conn: Mutex<Connection>,
}

const SCHEMA: &str = "
PRAGMA journal_mode = WAL;
CREATE TABLE IF NOT EXISTS runs (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    id TEXT NOT NULL UNIQUE,
    user TEXT NOT NULL,
    app TEXT NOT NULL,
    revision INTEGER NOT NULL,
    period TEXT NOT NULL,
    inputs TEXT NOT NULL,
    input_digest TEXT NOT NULL,
    status TEXT NOT NULL,
    outputs TEXT,
    failure TEXT,
    flags TEXT NOT NULL DEFAULT '[]',
    enqueued_at TEXT NOT NULL,
    started_at TEXT,
    finished_at TEXT,
    finish_seq INTEGER
);
CREATE TABLE IF NOT EXISTS audit (
    seq INTEGER PRIMARY KEY AUTOINCREMENT,
    at TEXT NOT NULL,
    user TEXT NOT NULL,
    action TEXT NOT NULL,
    app TEXT NOT NULL,
    revision INTEGER NOT NULL,
    run_id TEXT,
    input_digest TEXT
);
CREATE TRIGGER IF NOT EXISTS audit_no_update BEFORE UPDATE ON audit
BEGIN SELECT RAISE(ABORT, 'audit records are append-only'); END;
CREATE TRIGGER IF NOT EXISTS audit_no_delete BEFORE DELETE ON audit
BEGIN SELECT RAISE(ABORT, 'audit records are append-only'); END;
CREATE TABLE IF NOT EXISTS submissions (
    run_id TEXT NOT NULL,
    keys TEXT NOT NULL,
    seq INTEGER NOT NULL,
    app TEXT NOT NULL,
    revision INTEGER NOT NULL,
    user TEXT NOT NULL,
    period TEXT NOT NULL,
    measures TEXT NOT NULL,
    PRIMARY KEY (run_id, keys)
);
CREATE INDEX IF NOT EXISTS submissions_by_period ON submissions (app, period);
";

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn from_json<T: for<'de> Deserialize<'de>>(idx: usize, text: &str) -> rusqlite::Result<T> {
    serde_json::from_str(text).map_err(|e| {
        rusqlite::Error::FromSqlConversionFailure(idx, rusqlite::types::Type::Text, Box::new(e))
    })
}

const RUN_COLUMNS: &str = "seq, id, user, app, revision, period, inputs, input_digest, status, outputs, failure, flags, enqueued_at, started_at, finished_at, finish_seq";

fn run_from_row(r: &Row) -> rusqlite::Result<RunRecord> {
    let outputs: Option<String> = r.get(9)?;
    Ok(RunRecord {
        seq: r.get(0)?,
        id: r.get(1)?,
        user: r.get(2)?,
        app: r.get(3)?,
        revision: r.get(4)?,
        period: r.get(5)?,
        inputs: from_json(6, &r.get::<_, String>(6)?)?,
        input_digest: r.get(7)?,
        status: Status::parse(&r.get::<_, String>(8)?),
        outputs: outputs.map(|o| from_json(9, &o)).transpose()?,
        failure: r.get(10)?,
        flags: from_json(11, &r.get::<_, String>(11)?)?,
        enqueued_at: r.get(12)?,
        started_at: r.get(13)?,
        finished_at: r.get(14)?,
        finish_seq: r.get(15)?,
    })
}

fn insert_audit(
    tx: &Connection,
    user: &str,
    action: Action,
    app: &str,
    revision: u32,
    run_id: Option<&str>,
    digest: Option<&str>,
) -> rusqlite::Result<()> {
    tx.execute(
        "INSERT INTO audit (at, user, action, app, revision, run_id, input_digest) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
        params![now(), user, action.as_str(), app, revision, run_id, digest],
    )?;
    Ok(())
}

fn write_submissions(
    tx: &Connection,
    run: &RunRecord,
    keys: &[String],
    measures: &[String],
    rows: &[SubmissionRow],
) -> rusqlite::Result<()> {
    tx.execute("DELETE FROM submissions WHERE run_id = ?1", params![run.id])?;
    let mut insert = tx.prepare(
        "INSERT INTO submissions (run_id, keys, seq, app, revision, user, period, measures)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
    )?;
    for row in rows {
        let k: BTreeMap<&str, &str> = keys
            .iter()
            .map(String::as_str)
            .zip(row.keys.iter().map(String::as_str))
            .collect();
        let m: BTreeMap<&str, f64> = measures
            .iter()
            .map(String::as_str)
            .zip(row.measures.iter().copied())
            .collect();
        insert.execute(params![
            run.id,
            json(&k),
            run.seq,
            run.app,
            run.revision,
            run.user,
            run.period,
            json(&m)
        ])?;
    }
    Ok(())
}

/// A run about to be created.
pub struct NewRun<'a> {
    pub id: &'a str,
    pub user: &'a str,
    pub app: &'a str,
    pub revision: u32,
    pub period: &'a str,
    pub inputs: &'a BTreeMap<String, RawValue>,
    pub input_digest: &'a str,
}

impl Db {
    pub fn open(path: &Path) -> rusqlite::Result<Db> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Db {
            conn: Mutex::new(conn),
        })
    }

    pub fn open_in_memory() -> rusqlite::Result<Db> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch(SCHEMA)?;
        Ok(Db {
            conn: Mutex::new(conn),
        })
    }

    pub fn audit(
        &self,
        user: &str,
        action: Action,
        app: &str,
        revision: u32,
    ) -> rusqlite::Result<()> {
        insert_audit(
            &self.conn.lock().unwrap(),
            user,
            action,
            app,
            revision,
            None,
            None,
        )
    }

    /// Inserts a QUEUED run and its `run-created` record in one transaction.
    pub fn create_run(&self, run: &NewRun) -> rusqlite::Result<i64> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        tx.execute(
            "INSERT INTO runs (id, user, app, revision, period, inputs, input_digest, status, enqueued_at)
             VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, 'QUEUED', ?8)",
            params![run.id, run.user, run.app, run.revision, run.period, json(run.inputs), run.input_digest, now()],
        )?;
        let seq = tx.last_insert_rowid();
        insert_audit(
            &tx,
            run.user,
            Action::RunCreated,
            run.app,
            run.revision,
            Some(run.id),
            Some(run.input_digest),
        )?;
        tx.commit()?;
        Ok(seq)
    }

    /// QUEUED -> RUNNING. False when another worker got there first or the
    /// run is gone.
    pub fn claim(&self, id: &str) -> rusqlite::Result<bool> {
        let n = self.conn.lock().unwrap().execute(
            "UPDATE runs SET status = 'RUNNING', started_at = ?2 WHERE id = ?1 AND status = 'QUEUED'",
            params![id, now()],
        )?;
        Ok(n == 1)
    }

    /// RUNNING -> terminal, with submission rows and the terminal audit
    /// record, in one transaction. Re-recording a run replaces its rows.
    pub fn finish(&self, run: &RunRecord, end: Terminal) -> rusqlite::Result<()> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        let next: i64 = tx.query_row(
            "SELECT COALESCE(MAX(finish_seq), 0) + 1 FROM runs",
            [],
            |r| r.get(0),
        )?;
        let (status, outputs, failure, flags, action) = match &end {
            Terminal::Completed { outputs, flags, .. } => (
                Status::Completed,
                Some(json(outputs)),
                None,
                json(flags),
                Action::RunCompleted,
            ),
            Terminal::Failed(why) => (
                Status::Failed,
                None,
                Some(why.clone()),
                "[]".to_string(),
                Action::RunFailed,
            ),
        };
        let n = tx.execute(
            "UPDATE runs SET status = ?2, outputs = ?3, failure = ?4, flags = ?5, finished_at = ?6, finish_seq = ?7
             WHERE id = ?1 AND status = 'RUNNING'",
            params![run.id, status.as_str(), outputs, failure, flags, now(), next],
        )?;
        if n != 1 {
            return Ok(());
        }
        if let Terminal::Completed {
            rows,
            keys,
            measures,
            ..
        } = &end
        {
            write_submissions(&tx, run, keys, measures, rows)?;
        }
        insert_audit(
            &tx,
            &run.user,
            action,
            &run.app,
            run.revision,
            Some(&run.id),
            Some(&run.input_digest),
        )?;
        tx.commit()
    }

    /// Replaces the submission rows of `run`; recording twice leaves one
    /// copy.
    pub fn record_submissions(
        &self,
        run: &RunRecord,
        keys: &[String],
        measures: &[String],
        rows: &[SubmissionRow],
    ) -> rusqlite::Result<()> {
        let mut conn = self.conn.lock().unwrap();
        let tx = conn.transaction()?;
        write_submissions(&tx, run, keys, measures, rows)?;
        tx.commit()
    }

    pub fn run(&self, id: &str) -> rusqlite::Result<Option<RunRecord>> {
        self.conn
            .lock()
            .unwrap()
            .query_row(
                &format!("SELECT {RUN_COLUMNS} FROM runs WHERE id = ?1"),
                params![id],
                run_from_row,
            )
            .optional()
    }

    pub fn runs_with_status(&self, status: Status) -> rusqlite::Result<Vec<RunRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(&format!(
            "SELECT {RUN_COLUMNS} FROM runs WHERE status = ?1 ORDER BY seq"
        ))?;
        let rows = stmt.query_map(params![status.as_str()], run_from_row)?;
        rows.collect()
    }

    /// Marks runs left RUNNING by a previous process as failed.
    pub fn fail_interrupted(&self) -> rusqlite::Result<usize> {
        let stale = self.runs_with_status(Status::Running)?;
        for run in &stale {
            self.finish(run, Terminal::Failed("interrupted".to_string()))?;
        }
        Ok(stale.len())
    }

    pub fn audit_records(&self, filter: &AuditFilter) -> rusqlite::Result<Vec<AuditRecord>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt = conn.prepare(
            "SELECT seq, at, user, action, app, revision, run_id, input_digest FROM audit
             WHERE (?1 IS NULL OR user = ?1) AND (?2 IS NULL OR app = ?2)
               AND (?3 IS NULL OR at >= ?3) AND (?4 IS NULL OR at <= ?4)
             ORDER BY seq",
        )?;
        let rows = stmt.query_map(
            params![filter.user, filter.app, filter.from, filter.to],
            |r| {
                Ok(AuditRecord {
                    seq: r.get(0)?,
                    at: r.get(1)?,
                    user: r.get(2)?,
                    action: Action::parse(&r.get::<_, String>(3)?),
                    app: r.get(4)?,
                    revision: r.get(5)?,
                    run_id: r.get(6)?,
                    input_digest: r.get(7)?,
                })
            },
        )?;
        rows.collect()
    }

    pub fn submissions(&self, app: &str, period: &str) -> rusqlite::Result<Vec<StoredRow>> {
        let conn = self.conn.lock().unwrap();
        let mut stmt =
            conn.prepare("SELECT seq, run_id, user, period, keys, measures FROM submissions WHERE app = ?1 AND period = ?2")?;
        let rows = stmt.query_map(params![app, period], |r| {
            Ok(StoredRow {
                seq: r.get::<_, i64>(0)? as u64,
                run_id: r.get(1)?,
                user: r.get(2)?,
                period: r.get(3)?,
                keys: from_json(4, &r.get::<_, String>(4)?)?,
                measures: from_json(5, &r.get::<_, String>(5)?)?,
            })
        })?;
        rows.collect()
    }

    pub fn count_runs(&self) -> rusqlite::Result<i64> {
        self.conn
            .lock()
            .unwrap()
            .query_row("SELECT COUNT(*) FROM runs", [], |r| r.get(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn new_run<'a>(id: &'a str, inputs: &'a BTreeMap<String, RawValue>) -> NewRun<'a> {
        NewRun {
            id,
            user: "u",
            app: "a",
            revision: 1,
            period: "P",
            inputs,
            input_digest: "d",
        }
    }

    #[test]
    fn run_lifecycle_and_audit() {
        let db = Db::open_in_memory().unwrap();
        let inputs = BTreeMap::from([("x".to_string(), RawValue::Number(5.0))]);
        db.create_run(&new_run("r1", &inputs)).unwrap();
        assert!(db.claim("r1").unwrap());
        assert!(!db.claim("r1").unwrap());
        let run = db.run("r1").unwrap().unwrap();
        assert_eq!(run.status, Status::Running);
        let rows = vec![SubmissionRow {
            keys: vec!["S1".into()],
            measures: vec![2.5],
        }];
        let end = || Terminal::Completed {
            outputs: Outputs::new(),
            flags: vec![],
            rows: rows.clone(),
            keys: vec!["k".into()],
            measures: vec!["m".into()],
        };
        db.finish(&run, end()).unwrap();
        // a second terminal write is ignored
        db.finish(&run, end()).unwrap();
        let done = db.run("r1").unwrap().unwrap();
        assert_eq!((done.status, done.finish_seq), (Status::Completed, Some(1)));
        assert_eq!(done.inputs, inputs);
        let actions: Vec<_> = db
            .audit_records(&AuditFilter::default())
            .unwrap()
            .into_iter()
            .map(|a| a.action)
            .collect();
        assert_eq!(actions, [Action::RunCreated, Action::RunCompleted]);
        let subs = db.submissions("a", "P").unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].measures["m"], 2.5);
    }

    #[test]
    fn audit_rows_cannot_change() {
        let db = Db::open_in_memory().unwrap();
        db.audit("u", Action::Publish, "a", 1).unwrap();
        let conn = db.conn.lock().unwrap();
        assert!(conn.execute("UPDATE audit SET user = 'x'", []).is_err());
        assert!(conn.execute("DELETE FROM audit", []).is_err());
    }

    #[test]
    fn audit_filters() {
        let db = Db::open_in_memory().unwrap();
        db.audit("u", Action::Publish, "a", 1).unwrap();
        db.audit("v", Action::Publish, "b", 1).unwrap();
        let only_v = db
            .audit_records(&AuditFilter {
                user: Some("v".into()),
                ..Default::default()
            })
            .unwrap();
        assert_eq!(only_v.len(), 1);
        let future = AuditFilter {
            from: normalize_time("2999-01-01T00:00:00Z"),
            ..Default::default()
        };
        assert!(db.audit_records(&future).unwrap().is_empty());
    }
}
