//! Publication store, run service, aggregation and command line for
//! wrapsheet apps. The engine and app model live in `wrapsheet-core`.

pub mod bundle;
pub mod cli;
pub mod client;
pub mod config;
pub mod db;
pub mod format;
pub mod http;
pub mod report_html;
pub mod service;
pub mod store;

pub use wrapsheet_core as core;

pub use bundle::Bundle;
pub use config::{Config, Principal, Role};
pub use format::{load_workbook, parse_definition, serialize_definition, serialize_workbook};
pub use http::Server;
pub use service::Platform;
