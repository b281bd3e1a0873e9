//! A definition together with its workbook documents, as published.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wrapsheet_core::schema::Issue;
use wrapsheet_core::{AppDefinition, PreparedApp, Workbook};

use crate::format::{load_workbook, parse_definition, serialize_definition, serialize_workbook};

/// Raw documents: the definition text and workbook texts by workbook id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub definition: String,
    pub workbooks: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Args(String),
}

/// A checked bundle: parsed definition and loaded (recalculated) workbooks.
pub struct Loaded {
    pub definition: AppDefinition,
    pub workbooks: BTreeMap<String, Workbook>,
}

impl Bundle {
    /// Reads a definition file and its workbooks.
    ///
    /// Workbook paths in the definition are relative to the definition's
    /// directory. Each entry of `overrides` is either `id=path` or a path
    /// whose file name matches one in the definition.
    pub fn from_files(definition: &Path, overrides: &[String]) -> Result<Bundle, BundleError> {
        let text = read(definition)?;
        let base = definition
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut paths: BTreeMap<String, PathBuf> =
            match serde_json::from_str::<serde_json::Value>(&text) {
                Ok(v) => v["workbooks"]
                    .as_object()
                    .map(|m| {
                        m.iter()
                            .filter_map(|(k, p)| Some((k.clone(), base.join(p.as_str()?))))
                            .collect()
                    })
                    .unwrap_or_default(),
                // the parse error is reported by `load`
                Err(_) => BTreeMap::new(),
            };
        for arg in overrides {
            if let Some((id, path)) = arg.split_once('=') {
                paths.insert(id.to_string(), PathBuf::from(path));
                continue;
            }
            let path = PathBuf::from(arg);
            let name = path.file_name();
            let hit: Vec<String> = paths
                .iter()
                .filter(|(_, p)| p.file_name() == name)
                .map(|(k, _)| k.clone())
                .collect();
            match hit.as_slice() {
                [id] => {
                    paths.insert(id.clone(), path);
                }
                [] => {
                    return Err(BundleError::Args(format!(
                        "{arg}: no workbook in the definition has this file name; use id=path"
                    )))
                }
                _ => {
                    return Err(BundleError::Args(format!(
                        "{arg}: file name is ambiguous; use id=path"
                    )))
                }
            }
        }
        let mut workbooks = BTreeMap::new();
        for (id, path) in paths {
            workbooks.insert(id, read(&path)?);
        }
        Ok(Bundle {
            definition: text,
            workbooks,
        })
    }

    /// Parses everything and runs the full definition checks.
    pub fn load(&self) -> Result<Loaded, Vec<Issue>> {
        let definition = parse_definition(&self.definition).map_err(|e| e.issues())?;
        let mut issues = Vec::new();
        let mut workbooks = BTreeMap::new();
        for (id, text) in &self.workbooks {
            match load_workbook(text) {
                Ok(wb) => {
                    workbooks.insert(id.clone(), wb.full_recalculate());
                }
                Err(e) => issues.push(Issue::new(
                    format!("workbooks.{id}"),
                    format!("{}: {}", e.location, e.message),
                )),
            }
        }
        for id in workbooks.keys() {
            if !definition.workbooks.contains_key(id) {
                issues.push(Issue::new(
                    "workbooks",
                    format!("workbook `{id}` is not declared by the definition"),
                ));
            }
        }
        if !issues.is_empty() {
            return Err(issues);
        }
        let found = wrapsheet_core::validate_definition(&definition, &workbooks);
        if !found.is_empty() {
            return Err(found);
        }
        Ok(Loaded {
            definition,
            workbooks,
        })
    }

    /// The same content in canonical form.
    pub fn canonical(loaded: &Loaded) -> Bundle {
        Bundle {
            definition: serialize_definition(&loaded.definition),
            workbooks: loaded
                .workbooks
                .iter()
                .map(|(id, wb)| (id.clone(), serialize_workbook(wb)))
                .collect(),
        }
    }

    pub fn prepare(&self) -> Result<PreparedApp, Vec<Issue>> {
        let loaded = self.load()?;
        PreparedApp::new(loaded.definition, loaded.workbooks)
    }
}

fn read(path: &Path) -> Result<String, BundleError> {
    std::fs::read_to_string(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}
