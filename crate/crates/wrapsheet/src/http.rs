//! HTTP/JSON API under `/api`. Requests authenticate with `X-Auth-Token`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Component, Path as FsPath, PathBuf};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::config::{Config, Principal};
use crate::db::AuditFilter;
use crate::service::{ApiError, CreateRun, Platform, PublishRequest};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn principal(p: &Platform, headers: &HeaderMap) -> Result<Principal, ApiError> {
    p.authenticate(headers.get("x-auth-token").and_then(|v| v.to_str().ok()))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de)
        .map_err(|e| ApiError::BadRequest(format!("request body: {}: {}", e.path(), e.inner())))
}

/// Runs blocking platform work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

pub fn router(platform: Platform) -> Router {
    let api = Router::new()
        .route("/api/apps", get(list_apps).post(publish))
        .route("/api/apps/{name}", get(get_app))
        .route("/api/apps/{name}/restore", post(restore))
        .route("/api/runs", post(create_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/reports/{run_id}", get(run_report))
        .route(
            "/api/reports/aggregate/{app}/{period}",
            get(aggregate_report),
        )
        .route("/api/audit", get(audit))
        .route("/api/aggregate/{app}", get(aggregate));
    let api = match platform.config().static_dir.clone() {
        Some(dir) => api.fallback(move |uri: Uri| static_file(dir.clone(), uri)),
        None => api.fallback(|| async { ApiError::NotFound("no such endpoint".into()) }),
    };
    api.with_state(platform)
}

async fn list_apps(State(p): State<Platform>, headers: HeaderMap) -> ApiResult {
    let who = principal(&p, &headers)?;
    Ok(Json(blocking(move || p.list_apps(&who)).await?).into_response())
}

#[derive(Deserialize)]
struct RevQuery {
    rev: Option<u32>,
}

async fn get_app(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path(name): Path<String>,
    Query(q): Query<RevQuery>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    Ok(Json(blocking(move || p.get_app(&who, &name, q.rev)).await?).into_response())
}

async fn publish(State(p): State<Platform>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let who = principal(&p, &headers)?;
    let req: PublishRequest = body(&bytes)?;
    let revision = blocking(move || p.publish(&who, &req)).await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "revision": revision })),
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreBody {
    revision: u32,
}

async fn restore(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path(name): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    let req: RestoreBody = body(&bytes)?;
    let revision = blocking(move || p.restore(&who, &name, req.revision)).await?;
    Ok((
        StatusCode::CREATED,
        Json(serde_json::json!({ "revision": revision })),
    )
        .into_response())
}

async fn create_run(State(p): State<Platform>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let who = principal(&p, &headers)?;
    let req: CreateRun = body(&bytes)?;
    let id = blocking(move || p.create_run(&who, &req)).await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(serde_json::json!({ "run_id": id })),
    )
        .into_response())
}

async fn get_run(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    Ok(Json(blocking(move || p.get_run(&who, &id)).await?).into_response())
}

fn html(doc: String) -> Response {
    ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], doc).into_response()
}

async fn run_report(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    Ok(html(blocking(move || p.run_report(&who, &id)).await?))
}

async fn aggregate_report(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path((app, period)): Path<(String, String)>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    Ok(html(
        blocking(move || p.aggregate_report(&who, &app, &period)).await?,
    ))
}

async fn audit(
    State(p): State<Platform>,
    headers: HeaderMap,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    if let Some(k) = q
        .keys()
        .find(|k| !matches!(k.as_str(), "user" | "app" | "from" | "to"))
    {
        return Err(ApiError::BadRequest(format!(
            "unknown query parameter `{k}`"
        )));
    }
    let filter = AuditFilter {
        user: q.get("user").cloned(),
        app: q.get("app").cloned(),
        from: q.get("from").cloned(),
        to: q.get("to").cloned(),
    };
    Ok(Json(blocking(move || p.audit(&who, &filter)).await?).into_response())
}

#[derive(Deserialize)]
struct AggregateQuery {
    period: Option<String>,
    keys: Option<String>,
    measures: Option<String>,
}

fn list(param: Option<String>) -> Vec<String> {
    param
        .map(|s| {
            s.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default()
}

async fn aggregate(
    State(p): State<Platform>,
    headers: HeaderMap,
    Path(app): Path<String>,
    Query(q): Query<AggregateQuery>,
) -> ApiResult {
    let who = principal(&p, &headers)?;
    let period = q
        .period
        .unwrap_or_else(|| crate::service::DEFAULT_PERIOD.to_string());
    let (keys, measures) = (list(q.keys), list(q.measures));
    Ok(
        Json(blocking(move || p.aggregate(&who, &app, &period, &keys, &measures)).await?)
            .into_response(),
    )
}

async fn static_file(dir: PathBuf, uri: Uri) -> Response {
    let rel = uri.path().trim_start_matches('/');
    if rel.starts_with("api/") || rel == "api" {
        return ApiError::NotFound("no such endpoint".into()).into_response();
    }
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = FsPath::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match tokio::fs::read(dir.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(rel))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

fn content_type(path: &FsPath) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// A server running on its own thread; used by `serve` and by tests.
pub struct Server {
    pub addr: SocketAddr,
    platform: Platform,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    /// Starts the platform and binds `cfg.listen` (port 0 picks a free port).
    pub fn start(cfg: Config) -> anyhow::Result<Server> {
        let platform = Platform::start(cfg)?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?;
        let listener =
            runtime.block_on(tokio::net::TcpListener::bind(&platform.config().listen))?;
        let addr = listener.local_addr()?;
        let app = router(platform.clone());
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("http".into())
            .spawn(move || {
                runtime.block_on(async move {
                    let shutdown = async {
                        let _ = stopped.await;
                    };
                    if let Err(e) = axum::serve(listener, app)
                        .with_graceful_shutdown(shutdown)
                        .await
                    {
                        tracing::error!(error = %e, "server stopped");
                    }
                });
            })?;
        Ok(Server {
            addr,
            platform,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn platform(&self) -> &Platform {
        &self.platform
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}
