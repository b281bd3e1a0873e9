//! Append-only publication store.
//!
//! ```text
//! data_dir/apps/catalog.json          app -> label, latest revision
//! data_dir/apps/<app>/000001/meta.json
//! data_dir/apps/<app>/000001/<sha256>.json
//! ```
//!
//! A revision directory is written under a temporary name and renamed into
//! place; the catalog is then replaced by write-and-rename. Readers resolve
//! `latest` through the catalog, so they see the old head or the new one.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bundle::Bundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Origin {
    Fresh,
    RestoreOf { revision: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionMeta {
    pub app: String,
    pub revision: u32,
    pub label: String,
    pub author: String,
    pub published_at: String,
    pub origin: Origin,
    /// sha256 of the definition bytes
    pub definition: String,
    /// workbook id -> sha256 of its bytes
    pub workbooks: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishedRevision {
    pub meta: RevisionMeta,
    pub bundle: Bundle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub label: String,
    pub latest_revision: u32,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Catalog {
    apps: BTreeMap<String, CatalogApp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogApp {
    label: String,
    latest_revision: u32,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("app `{0}` not found")]
    UnknownApp(String),
    #[error("revision {1} of `{0}` not found")]
    UnknownRevision(String, u32),
    #[error("stored content of {0} does not match its hash")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub struct PublicationStore {
    root: PathBuf,
    writers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    catalog: Mutex<()>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl PublicationStore {
    pub fn open(data_dir: &Path) -> Result<PublicationStore, StoreError> {
        let root = data_dir.join("apps");
        fs::create_dir_all(&root)?;
        Ok(PublicationStore {
            root,
            writers: Mutex::new(HashMap::new()),
            catalog: Mutex::new(()),
        })
    }

    fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    fn read_catalog(&self) -> Result<Catalog, StoreError> {
        match fs::read(self.catalog_path()) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Catalog::default()),
            Err(e) => Err(e.into()),
        }
    }

    fn writer(&self, app: &str) -> Arc<Mutex<()>> {
        self.writers
            .lock()
            .unwrap()
            .entry(app.to_string())
            .or_default()
            .clone()
    }

    fn revision_dir(&self, app: &str, revision: u32) -> PathBuf {
        self.root.join(app).join(format!("{revision:06}"))
    }

    /// Highest revision on disk; the catalog may lag behind after a crash
    /// between the two renames.
    fn max_revision(&self, app: &str) -> Result<u32, StoreError> {
        let dir = self.root.join(app);
        let mut max = 0;
        if let Ok(entries) = fs::read_dir(&dir) {
            for e in entries {
                if let Some(n) = e?.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) {
                    max = max.max(n);
                }
            }
        }
        Ok(max)
    }

    /// Stores `bundle` as the next revision of `app`.
    pub fn publish(
        &self,
        app: &str,
        label: &str,
        bundle: &Bundle,
        author: &str,
    ) -> Result<RevisionMeta, StoreError> {
        let lock = self.writer(app);
        let _guard = lock.lock().unwrap();
        self.append(app, label, bundle, author, Origin::Fresh)
    }

    /// Copies `revision` into a new head revision.
    pub fn restore(
        &self,
        app: &str,
        revision: u32,
        admin: &str,
    ) -> Result<RevisionMeta, StoreError> {
        let lock = self.writer(app);
        let _guard = lock.lock().unwrap();
        let old = self.get(app, Some(revision))?;
        self.append(
            app,
            &old.meta.label,
            &old.bundle,
            admin,
            Origin::RestoreOf { revision },
        )
    }

    fn append(
        &self,
        app: &str,
        label: &str,
        bundle: &Bundle,
        author: &str,
        origin: Origin,
    ) -> Result<RevisionMeta, StoreError> {
        let revision = self.max_revision(app)? + 1;
        let app_dir = self.root.join(app);
        fs::create_dir_all(&app_dir)?;
        let tmp = app_dir.join(format!(".tmp-{}", uuid::Uuid::new_v4()));
        fs::create_dir(&tmp)?;

        let put = |bytes: &str| -> Result<String, StoreError> {
            let hash = sha256_hex(bytes.as_bytes());
            fs::write(tmp.join(format!("{hash}.json")), bytes)?;
            Ok(hash)
        };
        let definition = put(&bundle.definition)?;
        let mut workbooks = BTreeMap::new();
        for (id, text) in &bundle.workbooks {
            workbooks.insert(id.clone(), put(text)?);
        }
        let meta = RevisionMeta {
            app: app.to_string(),
            revision,
            label: label.to_string(),
            author: author.to_string(),
            published_at: crate::db::now(),
            origin,
            definition,
            workbooks,
        };
        fs::write(tmp.join("meta.json"), serde_json::to_vec_pretty(&meta)?)?;
        fs::rename(&tmp, self.revision_dir(app, revision))?;

        let _catalog = self.catalog.lock().unwrap();
        let mut catalog = self.read_catalog()?;
        catalog.apps.insert(
            app.to_string(),
            CatalogApp {
                label: label.to_string(),
                latest_revision: revision,
            },
        );
        let staged = self.root.join(format!(".catalog-{}", uuid::Uuid::new_v4()));
        fs::write(&staged, serde_json::to_vec_pretty(&catalog)?)?;
        fs::rename(&staged, self.catalog_path())?;
        Ok(meta)
    }

    pub fn latest(&self, app: &str) -> Result<u32, StoreError> {
        self.read_catalog()?
            .apps
            .get(app)
            .map(|a| a.latest_revision)
            .ok_or_else(|| StoreError::UnknownApp(app.to_string()))
    }

    pub fn meta(&self, app: &str, revision: Option<u32>) -> Result<RevisionMeta, StoreError> {
        let head = self.latest(app)?;
        let revision = revision.unwrap_or(head);
        if revision == 0 || revision > head {
            return Err(StoreError::UnknownRevision(app.to_string(), revision));
        }
        let bytes = fs::read(self.revision_dir(app, revision).join("meta.json"))
            .map_err(|_| StoreError::UnknownRevision(app.to_string(), revision))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// One revision (the latest when `revision` is `None`), with every file
    /// checked against its hash.
    pub fn get(&self, app: &str, revision: Option<u32>) -> Result<PublishedRevision, StoreError> {
        let meta = self.meta(app, revision)?;
        let dir = self.revision_dir(app, meta.revision);
        let read = |hash: &str| -> Result<String, StoreError> {
            let bytes = fs::read(dir.join(format!("{hash}.json")))?;
            if sha256_hex(&bytes) != hash {
                return Err(StoreError::Corrupt(format!("{app} r{}", meta.revision)));
            }
            String::from_utf8(bytes)
                .map_err(|_| StoreError::Corrupt(format!("{app} r{}", meta.revision)))
        };
        let definition = read(&meta.definition)?;
        let mut workbooks = BTreeMap::new();
        for (id, hash) in &meta.workbooks {
            workbooks.insert(id.clone(), read(hash)?);
        }
        Ok(PublishedRevision {
            bundle: Bundle {
                definition,
                workbooks,
            },
            meta,
        })
    }

    pub fn list(&self) -> Result<Vec<CatalogEntry>, StoreError> {
        Ok(self
            .read_catalog()?
            .apps
            .into_iter()
            .map(|(name, a)| CatalogEntry {
                name,
                label: a.label,
                latest_revision: a.latest_revision,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(n: u32) -> Bundle {
        Bundle {
            definition: format!("def {n}"),
            workbooks: [("main".to_string(), format!("wb {n}"))].into(),
        }
    }

    #[test]
    fn revisions_count_up_and_restore_appends() {
        let dir = tempfile::tempdir().unwrap();
        let store = PublicationStore::open(dir.path()).unwrap();
        for n in 1..=3 {
            assert_eq!(
                store.publish("a", "A", &bundle(n), "ann").unwrap().revision,
                n
            );
        }
        let r4 = store.restore("a", 1, "root").unwrap();
        assert_eq!(
            (r4.revision, r4.origin),
            (4, Origin::RestoreOf { revision: 1 })
        );
        assert_eq!(store.get("a", None).unwrap().bundle, bundle(1));
        assert_eq!(store.get("a", Some(2)).unwrap().bundle, bundle(2));
        assert!(matches!(
            store.get("a", Some(5)),
            Err(StoreError::UnknownRevision(..))
        ));
        assert!(matches!(
            store.get("ghost", None),
            Err(StoreError::UnknownApp(_))
        ));
        assert_eq!(
            store.list().unwrap(),
            [CatalogEntry {
                name: "a".into(),
                label: "A".into(),
                latest_revision: 4
            }]
        );
    }

    #[test]
    fn tampered_content_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = PublicationStore::open(dir.path()).unwrap();
        let meta = store.publish("a", "A", &bundle(1), "ann").unwrap();
        let path = dir
            .path()
            .join("apps/a/000001")
            .join(format!("{}.json", meta.definition));
        fs::write(path, "def 2").unwrap();
        assert!(matches!(store.get("a", None), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn concurrent_publishes_get_distinct_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let store = PublicationStore::open(dir.path()).unwrap();
        let mut revs: Vec<u32> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|n| {
                    let store = &store;
                    s.spawn(move || store.publish("a", "A", &bundle(n), "ann").unwrap().revision)
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        revs.sort();
        assert_eq!(revs, (1..=8).collect::<Vec<_>>());
        assert_eq!(store.latest("a").unwrap(), 8);
    }
}
