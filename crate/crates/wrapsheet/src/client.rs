//! Blocking client for the HTTP API.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use wrapsheet_core::submission::AggregateTable;

use crate::db::{AuditFilter, AuditRecord};
use crate::service::{AppView, CreateRun, PublishRequest, RunView};
use crate::store::CatalogEntry;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("server answered {status}: {body}")]
    Status {
        status: u16,
        body: serde_json::Value,
    },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
    #[error("timed out waiting for run {0}")]
    Timeout(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub struct Client {
    base: String,
    token: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(server: &str, token: &str) -> Client {
        Client {
            base: server.trim_end_matches('/').to_string(),
            token: token.to_string(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client"),
        }
    }

    fn send(
        &self,
        req: reqwest::blocking::RequestBuilder,
    ) -> Result<reqwest::blocking::Response, ClientError> {
        let resp = req.header("X-Auth-Token", &self.token).send()?;
        let status = resp.status().as_u16();
        if status >= 400 {
            let text = resp.text().unwrap_or_default();
            let body = serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text));
            return Err(ClientError::Status { status, body });
        }
        Ok(resp)
    }

    fn get<T: DeserializeOwned>(
        &self,
        path: &str,
        query: &[(&str, String)],
    ) -> Result<T, ClientError> {
        Ok(self
            .send(self.http.get(format!("{}{path}", self.base)).query(query))?
            .json()?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        Ok(self
            .send(self.http.post(format!("{}{path}", self.base)).json(body))?
            .json()?)
    }

    pub fn apps(&self) -> Result<Vec<CatalogEntry>, ClientError> {
        self.get("/api/apps", &[])
    }

    pub fn app(&self, name: &str, rev: Option<u32>) -> Result<AppView, ClientError> {
        let q: Vec<(&str, String)> = rev.map(|r| ("rev", r.to_string())).into_iter().collect();
        self.get(&format!("/api/apps/{name}"), &q)
    }

    pub fn publish(&self, req: &PublishRequest) -> Result<u32, ClientError> {
        let v: serde_json::Value = self.post("/api/apps", req)?;
        Ok(v["revision"].as_u64().unwrap_or_default() as u32)
    }

    pub fn restore(&self, app: &str, revision: u32) -> Result<u32, ClientError> {
        let v: serde_json::Value = self.post(
            &format!("/api/apps/{app}/restore"),
            &serde_json::json!({ "revision": revision }),
        )?;
        Ok(v["revision"].as_u64().unwrap_or_default() as u32)
    }

    pub fn create_run(&self, req: &CreateRun) -> Result<String, ClientError> {
        let v: serde_json::Value = self.post("/api/runs", req)?;
        Ok(v["run_id"].as_str().unwrap_or_default().to_string())
    }

    pub fn run(&self, id: &str) -> Result<RunView, ClientError> {
        self.get(&format!("/api/runs/{id}"), &[])
    }

    /// Polls with backoff until the run is terminal.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<RunView, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut pause = Duration::from_millis(5);
        loop {
            let view = self.run(id)?;
            if view.status.is_terminal() {
                return Ok(view);
            }
            if Instant::now() >= deadline {
                return Err(ClientError::Timeout(id.to_string()));
            }
            std::thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(250));
        }
    }

    pub fn report(&self, run_id: &str) -> Result<String, ClientError> {
        Ok(self
            .send(self.http.get(format!("{}/api/reports/{run_id}", self.base)))?
            .text()?)
    }

    pub fn aggregate_report(&self, app: &str, period: &str) -> Result<String, ClientError> {
        Ok(self
            .send(self.http.get(format!(
                "{}/api/reports/aggregate/{app}/{period}",
                self.base
            )))?
            .text()?)
    }

    pub fn audit(&self, filter: &AuditFilter) -> Result<Vec<AuditRecord>, ClientError> {
        let mut q = Vec::new();
        for (k, v) in [
            ("user", &filter.user),
            ("app", &filter.app),
            ("from", &filter.from),
            ("to", &filter.to),
        ] {
            if let Some(v) = v {
                q.push((k, v.clone()));
            }
        }
        self.get("/api/audit", &q)
    }

    pub fn aggregate(
        &self,
        app: &str,
        period: &str,
        keys: &[String],
        measures: &[String],
    ) -> Result<AggregateTable, ClientError> {
        let mut q = vec![("period", period.to_string())];
        if !keys.is_empty() {
            q.push(("keys", keys.join(",")));
        }
        if !measures.is_empty() {
            q.push(("measures", measures.join(",")));
        }
        self.get(&format!("/api/aggregate/{app}"), &q)
    }
}
