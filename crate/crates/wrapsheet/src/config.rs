//! Service configuration (TOML).
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "/var/lib/wrapsheet"
//! workers = 4
//! queue_bound = 1000
//! run_timeout_secs = 30
//!
//! [tokens]
//! "s3cret" = { user = "alice", role = "author" }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Consumer,
    Author,
    Admin,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Consumer => "consumer",
            Role::Author => "author",
            Role::Admin => "admin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Principal {
    pub user: String,
    pub role: Role,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_listen")]
    pub listen: String,
    pub data_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_queue_bound")]
    pub queue_bound: usize,
    #[serde(default = "default_timeout")]
    pub run_timeout_secs: f64,
    /// Web UI assets, served for paths outside `/api`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub tokens: BTreeMap<String, Principal>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}
fn default_workers() -> usize {
    4
}
fn default_queue_bound() -> usize {
    1000
}
fn default_timeout() -> f64 {
    30.0
}

impl Config {
    /// Defaults for everything but the data directory and tokens.
    pub fn new(data_dir: impl Into<PathBuf>) -> Config {
        Config {
            listen: default_listen(),
            data_dir: data_dir.into(),
            workers: default_workers(),
            queue_bound: default_queue_bound(),
            run_timeout_secs: default_timeout(),
            static_dir: None,
            tokens: BTreeMap::new(),
        }
    }

    pub fn with_token(mut self, token: &str, user: &str, role: Role) -> Config {
        self.tokens.insert(
            token.to_string(),
            Principal {
                user: user.to_string(),
                role,
            },
        );
        self
    }

    pub fn parse(text: &str) -> anyhow::Result<Config> {
        let cfg: Config = toml::from_str(text)?;
        anyhow::ensure!(cfg.workers >= 1, "workers must be at least 1");
        anyhow::ensure!(
            cfg.run_timeout_secs > 0.0,
            "run_timeout_secs must be positive"
        );
        Ok(cfg)
    }

    /// Reads a config file; a relative `data_dir` is taken from the file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(dir) = cfg.static_dir.as_mut().filter(|d| d.is_relative()) {
            *dir = base.join(&*dir);
        }
        Ok(cfg)
    }
}
