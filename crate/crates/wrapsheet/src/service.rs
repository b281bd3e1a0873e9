//! The platform behind the HTTP API: published apps, the run queue and its
//! workers, the audit trail and aggregation.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wrapsheet_core::report::{build_report, inject_and_report};
use wrapsheet_core::schema::{FieldErrors, Issue};
use wrapsheet_core::submission::{aggregate, extract_rows, AggregateTable};
use wrapsheet_core::{input_digest, Outputs, PreparedApp, RawValue};

use crate::bundle::Bundle;
use crate::config::{Config, Principal, Role};
use crate::db::{Action, AuditFilter, AuditRecord, Db, NewRun, RunRecord, Status, Terminal};
use crate::report_html::render_html;
use crate::store::{CatalogEntry, PublicationStore, StoreError};

pub const DEFAULT_PERIOD: &str = "default";

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("missing or unknown token")]
    Unauthenticated,
    #[error("requires the {0} role")]
    Forbidden(&'static str),
    #[error("{0}")]
    NotFound(String),
    #[error("run queue is full")]
    QueueFull,
    #[error("invalid inputs")]
    Fields(FieldErrors),
    #[error("definition has issues")]
    Invalid(Vec<Issue>),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::Unauthenticated => 401,
            ApiError::Forbidden(_) => 403,
            ApiError::NotFound(_) => 404,
            ApiError::QueueFull => 409,
            ApiError::Fields(_) | ApiError::Invalid(_) => 422,
            ApiError::BadRequest(_) => 400,
            ApiError::Internal(_) => 500,
        }
    }

    pub fn body(&self) -> serde_json::Value {
        match self {
            ApiError::Fields(f) => {
                serde_json::json!({ "error": self.to_string(), "field_errors": f })
            }
            ApiError::Invalid(issues) => serde_json::json!({
                "error": self.to_string(),
                "issues": issues.iter().map(|i| serde_json::json!({"path": i.path, "message": i.message})).collect::<Vec<_>>(),
            }),
            _ => serde_json::json!({ "error": self.to_string() }),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownApp(_) | StoreError::UnknownRevision(..) => {
                ApiError::NotFound(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<rusqlite::Error> for ApiError {
    fn from(e: rusqlite::Error) -> Self {
        ApiError::Internal(e.to_string())
    }
}

/// Body of `POST /api/apps`: the definition document and each workbook
/// document by workbook id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublishRequest {
    pub definition: serde_json::Value,
    pub workbooks: BTreeMap<String, serde_json::Value>,
}

impl PublishRequest {
    pub fn from_bundle(bundle: &Bundle) -> Result<PublishRequest, serde_json::Error> {
        let mut workbooks = BTreeMap::new();
        for (id, text) in &bundle.workbooks {
            workbooks.insert(id.clone(), serde_json::from_str(text)?);
        }
        Ok(PublishRequest {
            definition: serde_json::from_str(&bundle.definition)?,
            workbooks,
        })
    }

    fn to_bundle(&self) -> Bundle {
        Bundle {
            definition: self.definition.to_string(),
            workbooks: self
                .workbooks
                .iter()
                .map(|(id, v)| (id.clone(), v.to_string()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    pub app: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rev: Option<u32>,
    #[serde(default)]
    pub inputs: BTreeMap<String, RawValue>,
    /// Reporting period label; `"default"` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
}

/// What `GET /api/runs/{id}` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    pub run_id: String,
    pub app: String,
    pub revision: u32,
    pub period: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Outputs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_url: Option<String>,
    pub enqueued_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_seq: Option<i64>,
}

/// What `GET /api/apps/{name}` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppView {
    pub app: String,
    pub revision: u32,
    pub definition: serde_json::Value,
}

pub fn check_period(period: &str) -> Result<(), String> {
    if period.is_empty()
        || period.chars().count() > 64
        || period.contains('/')
        || period.chars().any(char::is_control)
    {
        return Err("period must be 1 to 64 characters without `/`".to_string());
    }
    Ok(())
}

struct Inner {
    cfg: Config,
    store: PublicationStore,
    db: Db,
    apps: Mutex<HashMap<(String, u32), Arc<PreparedApp>>>,
    submit: Mutex<()>,
}

/// The running platform. Cloning shares it.
#[derive(Clone)]
pub struct Platform {
    inner: Arc<Inner>,
    queue: Sender<String>,
    workers: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl Platform {
    /// Opens the store and database under `cfg.data_dir`, recovers runs
    /// left over by a previous process and starts the workers.
    pub fn start(cfg: Config) -> anyhow::Result<Platform> {
        std::fs::create_dir_all(&cfg.data_dir)?;
        let store = PublicationStore::open(&cfg.data_dir)?;
        let db = Db::open(&cfg.data_dir.join("wrapsheet.db"))?;
        let failed = db.fail_interrupted()?;
        if failed > 0 {
            tracing::warn!(failed, "runs interrupted by a restart were marked FAILED");
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        for run in db.runs_with_status(Status::Queued)? {
            tx.send(run.id).expect("receiver alive");
        }
        let workers = cfg.workers;
        let inner = Arc::new(Inner {
            cfg,
            store,
            db,
            apps: Mutex::new(HashMap::new()),
            submit: Mutex::new(()),
        });
        let handles = (0..workers)
            .map(|i| {
                let inner = inner.clone();
                let rx: Receiver<String> = rx.clone();
                std::thread::Builder::new()
                    .name(format!("run-worker-{i}"))
                    .spawn(move || worker(inner, rx))
                    .expect("spawn worker")
            })
            .collect();
        Ok(Platform {
            inner,
            queue: tx,
            workers: Arc::new(Mutex::new(handles)),
        })
    }

    pub fn config(&self) -> &Config {
        &self.inner.cfg
    }

    pub fn store(&self) -> &PublicationStore {
        &self.inner.store
    }

    pub fn db(&self) -> &Db {
        &self.inner.db
    }

    pub fn authenticate(&self, token: Option<&str>) -> Result<Principal, ApiError> {
        token
            .and_then(|t| self.inner.cfg.tokens.get(t))
            .cloned()
            .ok_or(ApiError::Unauthenticated)
    }

    fn require(p: &Principal, role: Role) -> Result<(), ApiError> {
        if p.role >= role {
            Ok(())
        } else {
            Err(ApiError::Forbidden(role.as_str()))
        }
    }

    pub fn list_apps(&self, _p: &Principal) -> Result<Vec<CatalogEntry>, ApiError> {
        Ok(self.inner.store.list()?)
    }

    /// The definition document; consumers get it without bindings.
    pub fn get_app(
        &self,
        p: &Principal,
        name: &str,
        rev: Option<u32>,
    ) -> Result<AppView, ApiError> {
        let published = self.inner.store.get(name, rev)?;
        let mut definition: serde_json::Value = serde_json::from_str(&published.bundle.definition)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        if p.role == Role::Consumer {
            if let Some(obj) = definition.as_object_mut() {
                obj.remove("bindings");
                obj.remove("workbooks");
                if let Some(agg) = obj
                    .get_mut("aggregate_report")
                    .and_then(|a| a.as_object_mut())
                {
                    agg.remove("wb");
                    agg.remove("region");
                }
            }
        }
        Ok(AppView {
            app: name.to_string(),
            revision: published.meta.revision,
            definition,
        })
    }

    pub fn publish(&self, p: &Principal, req: &PublishRequest) -> Result<u32, ApiError> {
        Self::require(p, Role::Author)?;
        let loaded = req.to_bundle().load().map_err(ApiError::Invalid)?;
        let canonical = Bundle::canonical(&loaded);
        let name = loaded.definition.name.clone();
        let meta =
            self.inner
                .store
                .publish(&name, &loaded.definition.label, &canonical, &p.user)?;
        self.inner
            .db
            .audit(&p.user, Action::Publish, &name, meta.revision)?;
        tracing::info!(app = %name, revision = meta.revision, user = %p.user, "published");
        Ok(meta.revision)
    }

    pub fn restore(&self, p: &Principal, app: &str, revision: u32) -> Result<u32, ApiError> {
        Self::require(p, Role::Admin)?;
        let meta = self.inner.store.restore(app, revision, &p.user)?;
        self.inner
            .db
            .audit(&p.user, Action::Restore, app, meta.revision)?;
        tracing::info!(app, from = revision, revision = meta.revision, user = %p.user, "restored");
        Ok(meta.revision)
    }

    fn prepared(&self, app: &str, revision: u32) -> Result<Arc<PreparedApp>, ApiError> {
        prepared(&self.inner, app, revision)
    }

    /// Validates inputs against the pinned revision and queues a run.
    pub fn create_run(&self, p: &Principal, req: &CreateRun) -> Result<String, ApiError> {
        let revision = match req.rev {
            Some(r) => self.inner.store.meta(&req.app, Some(r))?.revision,
            None => self.inner.store.latest(&req.app)?,
        };
        let period = req
            .period
            .clone()
            .unwrap_or_else(|| DEFAULT_PERIOD.to_string());
        check_period(&period).map_err(ApiError::BadRequest)?;
        let app = self.prepared(&req.app, revision)?;
        let edits = app.validate_inputs(&req.inputs).map_err(ApiError::Fields)?;
        let digest = input_digest(&edits);

        let id = uuid::Uuid::new_v4().simple().to_string();
        let _guard = self.inner.submit.lock().unwrap();
        if self.queue.len() >= self.inner.cfg.queue_bound {
            return Err(ApiError::QueueFull);
        }
        self.inner.db.create_run(&NewRun {
            id: &id,
            user: &p.user,
            app: &req.app,
            revision,
            period: &period,
            inputs: &req.inputs,
            input_digest: &digest,
        })?;
        if self.queue.send(id.clone()).is_err() {
            // No workers: the run stays QUEUED and is picked up on restart.
            tracing::warn!(run = %id, "no workers running; run left queued");
        }
        Ok(id)
    }

    fn visible_run(&self, p: &Principal, id: &str) -> Result<RunRecord, ApiError> {
        match self.inner.db.run(id)? {
            Some(run) if run.user == p.user || p.role == Role::Admin => Ok(run),
            _ => Err(ApiError::NotFound(format!("run `{id}` not found"))),
        }
    }

    pub fn get_run(&self, p: &Principal, id: &str) -> Result<RunView, ApiError> {
        let run = self.visible_run(p, id)?;
        let has_report = run.status == Status::Completed
            && self
                .prepared(&run.app, run.revision)
                .map(|a| a.definition().report.is_some())
                .unwrap_or(false);
        Ok(RunView {
            report_url: has_report.then(|| format!("/api/reports/{}", run.id)),
            run_id: run.id,
            app: run.app,
            revision: run.revision,
            period: run.period,
            status: run.status,
            outputs: run.outputs,
            failure: run.failure,
            flags: run.flags,
            enqueued_at: run.enqueued_at,
            started_at: run.started_at,
            finished_at: run.finished_at,
            finish_seq: run.finish_seq,
        })
    }

    /// Waits until the run is terminal or `timeout` passes.
    pub fn wait_for(
        &self,
        p: &Principal,
        id: &str,
        timeout: Duration,
    ) -> Result<RunView, ApiError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let view = self.get_run(p, id)?;
            if view.status.is_terminal() || std::time::Instant::now() >= deadline {
                return Ok(view);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// HTML report of a completed run.
    pub fn run_report(&self, p: &Principal, id: &str) -> Result<String, ApiError> {
        let run = self.visible_run(p, id)?;
        let outputs = match (run.status, run.outputs) {
            (Status::Completed, Some(o)) => o,
            _ => return Err(ApiError::NotFound(format!("run `{id}` has no report yet"))),
        };
        let app = self.prepared(&run.app, run.revision)?;
        let template =
            app.definition().report.as_ref().ok_or_else(|| {
                ApiError::NotFound(format!("app `{}` defines no report", run.app))
            })?;
        Ok(render_html(&build_report(template, &outputs)))
    }

    pub fn audit(&self, p: &Principal, filter: &AuditFilter) -> Result<Vec<AuditRecord>, ApiError> {
        Self::require(p, Role::Admin)?;
        let mut f = filter.clone();
        for bound in [&mut f.from, &mut f.to] {
            if let Some(t) = bound.as_deref() {
                *bound = Some(
                    crate::db::normalize_time(t)
                        .ok_or_else(|| ApiError::BadRequest(format!("bad timestamp `{t}`")))?,
                );
            }
        }
        Ok(self.inner.db.audit_records(&f)?)
    }

    /// Aggregates the latest revision's submission rows for one period.
    /// Empty `keys`/`measures` mean all of them.
    pub fn aggregate(
        &self,
        p: &Principal,
        app: &str,
        period: &str,
        keys: &[String],
        measures: &[String],
    ) -> Result<AggregateTable, ApiError> {
        Self::require(p, Role::Author)?;
        let prepared = self.prepared(app, self.inner.store.latest(app)?)?;
        let schema =
            prepared.definition().submission.as_ref().ok_or_else(|| {
                ApiError::BadRequest(format!("app `{app}` has no submission schema"))
            })?;
        let keys = if keys.is_empty() {
            schema.keys.clone()
        } else {
            keys.to_vec()
        };
        let measures = if measures.is_empty() {
            schema.measures.clone()
        } else {
            measures.to_vec()
        };
        let rows = self.inner.db.submissions(app, period)?;
        aggregate(schema, &rows, period, &keys, &measures)
            .map_err(|e| ApiError::BadRequest(e.to_string()))
    }

    /// The aggregate over all keys, injected into the app's template
    /// workbook, as an HTML report.
    pub fn aggregate_report(
        &self,
        p: &Principal,
        app: &str,
        period: &str,
    ) -> Result<String, ApiError> {
        let table = self.aggregate(p, app, period, &[], &[])?;
        let prepared = self.prepared(app, self.inner.store.latest(app)?)?;
        let (model, _) = inject_and_report(&prepared, &table)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        Ok(render_html(&model))
    }

    /// Drops this handle. The last handle to go also lets the workers drain
    /// the queue and waits for them.
    pub fn shutdown(self) {
        let Platform { workers, queue, .. } = self;
        drop(queue);
        if let Some(workers) = Arc::into_inner(workers) {
            for h in workers.into_inner().unwrap() {
                let _ = h.join();
            }
        }
    }
}

fn prepared(inner: &Inner, app: &str, revision: u32) -> Result<Arc<PreparedApp>, ApiError> {
    let key = (app.to_string(), revision);
    if let Some(hit) = inner.apps.lock().unwrap().get(&key) {
        return Ok(hit.clone());
    }
    let published = inner.store.get(app, Some(revision))?;
    let ready = Arc::new(published.bundle.prepare().map_err(|issues| {
        ApiError::Internal(format!(
            "stored revision {app} r{revision} no longer validates: {}",
            issues.len()
        ))
    })?);
    inner.apps.lock().unwrap().insert(key, ready.clone());
    Ok(ready)
}

fn worker(inner: Arc<Inner>, rx: Receiver<String>) {
    while let Ok(id) = rx.recv() {
        if let Err(e) = execute(&inner, &id) {
            tracing::error!(run = %id, error = %e, "run bookkeeping failed");
        }
    }
}

fn execute(inner: &Arc<Inner>, id: &str) -> Result<(), ApiError> {
    if !inner.db.claim(id)? {
        return Ok(());
    }
    let run = inner
        .db
        .run(id)?
        .ok_or_else(|| ApiError::Internal("claimed run vanished".into()))?;
    let end = match prepared(inner, &run.app, run.revision) {
        Ok(app) => evaluate(
            app,
            run.inputs.clone(),
            Duration::from_secs_f64(inner.cfg.run_timeout_secs),
        ),
        Err(e) => Terminal::Failed(e.to_string()),
    };
    if let Terminal::Failed(why) = &end {
        tracing::warn!(run = %id, reason = %why, "run failed");
    }
    inner.db.finish(&run, end)?;
    Ok(())
}

/// Runs the pipeline on its own thread so a stuck or panicking evaluation
/// becomes a FAILED run.
fn evaluate(
    app: Arc<PreparedApp>,
    inputs: BTreeMap<String, RawValue>,
    timeout: Duration,
) -> Terminal {
    let (tx, rx) = crossbeam_channel::bounded(1);
    let spawned = std::thread::Builder::new()
        .name("run-eval".into())
        .spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(|| {
                let result = app.run(&inputs).map_err(|e| match e {
                    wrapsheet_core::pipeline::RunError::Fields(f) => {
                        format!("inputs no longer validate: {f:?}")
                    }
                    other => other.to_string(),
                })?;
                let mut end = (
                    result.outputs,
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                    Vec::new(),
                );
                if let Some(schema) = &app.definition().submission {
                    let ex = extract_rows(schema, &end.0);
                    end.1 = ex.flags;
                    end.2 = ex.rows;
                    end.3 = schema.keys.clone();
                    end.4 = schema.measures.clone();
                }
                Ok::<_, String>(end)
            }));
            let _ = tx.send(result);
        });
    if let Err(e) = spawned {
        return Terminal::Failed(format!("could not start evaluation: {e}"));
    }
    match rx.recv_timeout(timeout) {
        Ok(Ok(Ok((outputs, flags, rows, keys, measures)))) => Terminal::Completed {
            outputs,
            flags,
            rows,
            keys,
            measures,
        },
        Ok(Ok(Err(why))) => Terminal::Failed(why),
        Ok(Err(_)) => Terminal::Failed("evaluation panicked".to_string()),
        Err(_) => Terminal::Failed("timeout".to_string()),
    }
}
