#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use wrapsheet::client::Client;
use wrapsheet::core::RawValue;
use wrapsheet::service::PublishRequest;
use wrapsheet::{Bundle, Config, Role, Server};

pub const SCENARIOS: [&str; 3] = ["S1", "S2", "S3"];
pub const CODES: [&str; 4] = ["RC-01", "RC-02", "RC-03", "RC-04"];

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

pub fn rds_bundle() -> Bundle {
    Bundle::from_files(&fixture("rds/definition.json"), &[]).unwrap()
}

pub fn minimal_bundle() -> Bundle {
    Bundle::from_files(&fixture("minimal/definition.json"), &[]).unwrap()
}

/// The minimal app with `A2` computing `A1*factor`.
pub fn minimal_with_factor(factor: u32) -> Bundle {
    let mut bundle = minimal_bundle();
    let book = bundle.workbooks.get_mut("book").unwrap();
    let edited = book.replace("\"=A1*2\"", &format!("\"=A1*{factor}\""));
    assert!(factor == 2 || &edited != book);
    *book = edited;
    bundle
}

pub fn request(bundle: &Bundle) -> PublishRequest {
    PublishRequest::from_bundle(bundle).unwrap()
}

pub fn user_token(i: usize) -> String {
    format!("tok-u{i:02}")
}

pub fn user_name(i: usize) -> String {
    format!("u{i:02}")
}

/// Config with an admin, an author and `users` consumers, on a free port.
pub fn config(dir: &std::path::Path, users: usize) -> Config {
    let mut cfg = Config::new(dir)
        .with_token("tok-admin", "root", Role::Admin)
        .with_token("tok-author", "ann", Role::Author);
    for i in 1..=users {
        cfg = cfg.with_token(&user_token(i), &user_name(i), Role::Consumer);
    }
    cfg.listen = "127.0.0.1:0".to_string();
    cfg
}

pub struct TestServer {
    pub server: Server,
    pub dir: tempfile::TempDir,
}

impl TestServer {
    pub fn start(users: usize, tweak: impl FnOnce(&mut Config)) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path(), users);
        tweak(&mut cfg);
        TestServer {
            server: Server::start(cfg).unwrap(),
            dir,
        }
    }

    pub fn client(&self, token: &str) -> Client {
        Client::new(&self.server.url(), token)
    }

    pub fn admin(&self) -> Client {
        self.client("tok-admin")
    }

    pub fn author(&self) -> Client {
        self.client("tok-author")
    }
}

/// The field id for scenario `s` (0-based) and risk code `c`.
pub fn field(s: usize, c: usize) -> String {
    format!("s{}_rc0{}", s + 1, c + 1)
}

/// RDS form values with the given exposures (scenario-major).
pub fn rds_inputs(values: &[[f64; 4]; 3]) -> BTreeMap<String, RawValue> {
    let mut m = BTreeMap::new();
    m.insert("currency".to_string(), RawValue::from("GBP"));
    m.insert("basis".to_string(), RawValue::from("Gross"));
    for (s, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m.insert(field(s, c), RawValue::Number(*v));
        }
    }
    m
}

pub const WAIT: Duration = Duration::from_secs(60);
