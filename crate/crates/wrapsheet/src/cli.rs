//! Command-line front end.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use wrapsheet_core::{CellValue, OutputValue, Outputs, RawValue};

use crate::bundle::{Bundle, BundleError};
use crate::client::{Client, ClientError};
use crate::config::Config;
use crate::db::AuditFilter;
use crate::format::serialize_workbook;
use crate::service::{CreateRun, PublishRequest};

#[derive(Parser, Debug)]
#[command(
    name = "wrapsheet",
    version,
    about = "Publish spreadsheets as controlled web applications"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct Remote {
    /// Service base URL
    #[arg(
        long,
        env = "WRAPSHEET_SERVER",
        default_value = "http://127.0.0.1:8080"
    )]
    pub server: String,
    #[arg(long, env = "WRAPSHEET_TOKEN")]
    pub token: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a definition and its workbooks; prints one issue per line
    Validate {
        definition: PathBuf,
        /// Workbook files, as `id=path` or by file name
        workbooks: Vec<String>,
    },
    /// Publish a definition and its workbooks; prints the new revision
    Publish {
        #[command(flatten)]
        remote: Remote,
        definition: PathBuf,
        workbooks: Vec<String>,
    },
    /// Run an app in-process and print its outputs
    RunLocal {
        definition: PathBuf,
        workbooks: Vec<String>,
        /// JSON object of component id -> value
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Print outputs as JSON
        #[arg(long)]
        json: bool,
        /// Write the calculated workbooks to this directory
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Start the service
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Create a run on the service and wait for its outputs
    Run {
        #[command(flatten)]
        remote: Remote,
        app: String,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        rev: Option<u32>,
        #[arg(long)]
        period: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Print an aggregate table as CSV
    Aggregate {
        #[command(flatten)]
        remote: Remote,
        app: String,
        #[arg(long, default_value = crate::service::DEFAULT_PERIOD)]
        period: String,
        /// Comma-separated key names (default: all)
        #[arg(long)]
        keys: Option<String>,
        /// Comma-separated measure names (default: all)
        #[arg(long)]
        measures: Option<String>,
    },
    /// Make an old revision the new head (admin)
    Restore {
        #[command(flatten)]
        remote: Remote,
        app: String,
        revision: u32,
    },
    /// Print audit records as JSON lines (admin)
    Audit {
        #[command(flatten)]
        remote: Remote,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure(i32, String);

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        Failure(2, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(1, e.to_string())
    }
}

fn remote_failure(e: ClientError, err: &mut dyn Write) -> Failure {
    match e.status() {
        Some(401) => Failure(3, e.to_string()),
        Some(403) => Failure(4, e.to_string()),
        Some(422) => {
            if let ClientError::Status { body, .. } = &e {
                for issue in body["issues"].as_array().into_iter().flatten() {
                    let _ = writeln!(
                        err,
                        "{}: {}",
                        issue["path"].as_str().unwrap_or(""),
                        issue["message"].as_str().unwrap_or("")
                    );
                }
                for (field, msg) in body["field_errors"].as_object().into_iter().flatten() {
                    let _ = writeln!(err, "{field}: {}", msg.as_str().unwrap_or(""));
                }
            }
            Failure(5, "rejected by the server".to_string())
        }
        _ => Failure(1, e.to_string()),
    }
}

fn read_inputs(path: Option<&Path>) -> Result<BTreeMap<String, RawValue>, Failure> {
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure(2, format!("{}: {e}", path.display())))
}

fn split_list(s: Option<&str>) -> Vec<String> {
    s.map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    })
    .unwrap_or_default()
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    match command {
        Command::Validate {
            definition,
            workbooks,
        } => {
            let bundle = Bundle::from_files(&definition, &workbooks)?;
            match bundle.load() {
                Ok(_) => Ok(0),
                Err(issues) => {
                    for issue in issues {
                        writeln!(out, "{issue}")?;
                    }
                    Ok(1)
                }
            }
        }
        Command::Publish {
            remote,
            definition,
            workbooks,
        } => {
            let bundle = Bundle::from_files(&definition, &workbooks)?;
            let req = PublishRequest::from_bundle(&bundle)
                .map_err(|e| Failure(1, format!("not JSON: {e}")))?;
            let revision = Client::new(&remote.server, &remote.token)
                .publish(&req)
                .map_err(|e| remote_failure(e, err))?;
            writeln!(out, "{revision}")?;
            Ok(0)
        }
        Command::RunLocal {
            definition,
            workbooks,
            inputs,
            json,
            export,
        } => {
            let bundle = Bundle::from_files(&definition, &workbooks)?;
            let app = match bundle.prepare() {
                Ok(app) => app,
                Err(issues) => {
                    for issue in issues {
                        writeln!(err, "{issue}")?;
                    }
                    return Ok(1);
                }
            };
            let raw = read_inputs(inputs.as_deref())?;
            let edits = match app.validate_inputs(&raw) {
                Ok(edits) => edits,
                Err(fields) => {
                    for (field, msg) in fields {
                        writeln!(err, "{field}: {msg}")?;
                    }
                    return Ok(1);
                }
            };
            let result = app.execute(&edits).map_err(|e| Failure(1, e.to_string()))?;
            print_outputs(&result.outputs, json, out)?;
            if let Some(dir) = export {
                std::fs::create_dir_all(&dir)?;
                for (id, wb) in &result.workbooks {
                    std::fs::write(dir.join(format!("{id}.json")), serialize_workbook(wb))?;
                }
            }
            Ok(0)
        }
        Command::Serve { config } => {
            let cfg = Config::load(&config).map_err(|e| Failure(2, e.to_string()))?;
            let server = crate::http::Server::start(cfg).map_err(|e| Failure(1, e.to_string()))?;
            tracing::info!(url = %server.url(), "listening");
            writeln!(out, "listening on {}", server.url())?;
            out.flush()?;
            server.wait();
            Ok(0)
        }
        Command::Run {
            remote,
            app,
            inputs,
            rev,
            period,
            json,
        } => {
            let client = Client::new(&remote.server, &remote.token);
            let req = CreateRun {
                app,
                rev,
                inputs: read_inputs(inputs.as_deref())?,
                period,
            };
            let id = client
                .create_run(&req)
                .map_err(|e| remote_failure(e, err))?;
            let view = client
                .wait(&id, Duration::from_secs(600))
                .map_err(|e| remote_failure(e, err))?;
            match view.outputs {
                Some(outputs) => {
                    print_outputs(&outputs, json, out)?;
                    Ok(0)
                }
                None => Err(Failure(
                    1,
                    format!("run {id} failed: {}", view.failure.unwrap_or_default()),
                )),
            }
        }
        Command::Aggregate {
            remote,
            app,
            period,
            keys,
            measures,
        } => {
            let client = Client::new(&remote.server, &remote.token);
            let table = client
                .aggregate(
                    &app,
                    &period,
                    &split_list(keys.as_deref()),
                    &split_list(measures.as_deref()),
                )
                .map_err(|e| remote_failure(e, err))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            let header: Vec<&str> = table
                .keys
                .iter()
                .chain(&table.measures)
                .map(String::as_str)
                .chain(["rows", "users"])
                .collect();
            let row_err = |e: csv::Error| Failure(1, e.to_string());
            w.write_record(&header).map_err(row_err)?;
            for g in &table.groups {
                let mut rec: Vec<String> = g.keys.clone();
                rec.extend(
                    g.sums
                        .iter()
                        .map(|s| wrapsheet_core::value::format_number(*s)),
                );
                rec.push(g.rows.to_string());
                rec.push(g.users.to_string());
                w.write_record(&rec).map_err(row_err)?;
            }
            out.write_all(&w.into_inner().map_err(|e| Failure(1, e.to_string()))?)?;
            Ok(0)
        }
        Command::Restore {
            remote,
            app,
            revision,
        } => {
            let revision = Client::new(&remote.server, &remote.token)
                .restore(&app, revision)
                .map_err(|e| remote_failure(e, err))?;
            writeln!(out, "{revision}")?;
            Ok(0)
        }
        Command::Audit {
            remote,
            user,
            app,
            from,
            to,
        } => {
            let records = Client::new(&remote.server, &remote.token)
                .audit(&AuditFilter {
                    user,
                    app,
                    from,
                    to,
                })
                .map_err(|e| remote_failure(e, err))?;
            for r in records {
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string(&r).expect("record serializes")
                )?;
            }
            Ok(0)
        }
    }
}

/// Scalars as `id = value`; tables as tab-separated rows under `id:`.
pub fn format_outputs(outputs: &Outputs) -> String {
    let mut s = String::new();
    for (id, v) in outputs {
        match v {
            OutputValue::Scalar(v) => s.push_str(&format!("{id} = {}\n", v.display_text())),
            OutputValue::Table(rows) => {
                s.push_str(&format!("{id}:\n"));
                for row in rows {
                    let cells: Vec<String> = row.iter().map(CellValue::display_text).collect();
                    s.push_str(&format!("  {}\n", cells.join("\t")));
                }
            }
        }
    }
    s
}

fn print_outputs(outputs: &Outputs, json: bool, out: &mut dyn Write) -> std::io::Result<()> {
    if json {
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(outputs).expect("outputs serialize")
        )
    } else {
        out.write_all(format_outputs(outputs).as_bytes())
    }
}
