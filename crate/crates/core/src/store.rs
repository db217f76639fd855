//! File-backed record store.
//!
//! Layout under the data directory:
//!
//! ```text
//! users/<user_id>.json
//! photos/<photo_id>.json
//! sessions/<session_id>.json
//! summaries/<summary_id>.json
//! blobs/<photo_id>
//! ```
//!
//! Each JSON file holds an envelope with a schema version, a record version
//! counter and the record itself. Writes go to a temp file in the same
//! directory and are renamed into place, so readers never see a partial
//! record. Updates are compare-and-swap on the version counter.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::domain::{ChatSummary, DialogueState, Photo, UserRecord};

pub const SCHEMA_VERSION: u32 = 1;
const MAX_ID_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{kind} {id}: expected version {expected}, found {actual}")]
    VersionConflict {
        kind: &'static str,
        id: String,
        expected: u64,
        actual: u64,
    },
    #[error("invalid record id {0:?}")]
    InvalidId(String),
    #[error("storage I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record at {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("record at {path} has schema version {found}, expected {SCHEMA_VERSION}")]
    UnsupportedSchema { path: PathBuf, found: u32 },
}

/// A record type the store knows how to file.
pub trait Record: Serialize + DeserializeOwned + Clone + Send {
    /// Directory name under the data root.
    const KIND: &'static str;
    fn record_id(&self) -> &str;
}

impl Record for UserRecord {
    const KIND: &'static str = "users";
    fn record_id(&self) -> &str {
        self.user_id.as_str()
    }
}

impl Record for Photo {
    const KIND: &'static str = "photos";
    fn record_id(&self) -> &str {
        self.photo_id.as_str()
    }
}

impl Record for DialogueState {
    const KIND: &'static str = "sessions";
    fn record_id(&self) -> &str {
        self.session_id.as_str()
    }
}

impl Record for ChatSummary {
    const KIND: &'static str = "summaries";
    fn record_id(&self) -> &str {
        self.summary_id.as_str()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u64,
    pub record: T,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    version: u64,
    record: T,
}

/// Accepts ids made of ASCII letters, digits, `-`, `_` and `.`, not
/// starting with a dot.
pub fn validate_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// One write lock per (kind, id).
type LockMap = HashMap<(&'static str, String), Arc<Mutex<()>>>;

pub struct Store {
    root: PathBuf,
    locks: Mutex<LockMap>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

impl Store {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        for kind in [
            UserRecord::KIND,
            Photo::KIND,
            DialogueState::KIND,
            ChatSummary::KIND,
            "blobs",
        ] {
            fs::create_dir_all(root.join(kind))?;
        }
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for<T: Record>(&self, id: &str) -> PathBuf {
        self.root.join(T::KIND).join(format!("{id}.json"))
    }

    fn lock_for(&self, kind: &'static str, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry((kind, id.to_string())).or_default().clone()
    }

    fn read_envelope<T: Record>(&self, id: &str) -> Result<Option<Envelope<T>>, StoreError> {
        let path = self.path_for::<T>(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let env: Envelope<T> =
            serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt {
                path: path.clone(),
                source,
            })?;
        if env.schema_version != SCHEMA_VERSION {
            return Err(StoreError::UnsupportedSchema {
                path,
                found: env.schema_version,
            });
        }
        Ok(Some(env))
    }

    fn write_envelope<T: Record>(&self, record: &T, version: u64) -> Result<(), StoreError> {
        let id = record.record_id();
        let path = self.path_for::<T>(id);
        let env = Envelope {
            schema_version: SCHEMA_VERSION,
            version,
            record,
        };
        let json = serde_json::to_vec_pretty(&env).map_err(|source| StoreError::Corrupt {
            path: path.clone(),
            source,
        })?;
        write_atomically(&path, &json)?;
        debug!(kind = T::KIND, id, version, "record written");
        Ok(())
    }

    /// Creates a record at version 1. Fails with a version conflict if a
    /// record with the same id already exists.
    pub fn insert<T: Record>(&self, record: &T) -> Result<u64, StoreError> {
        self.update(record, 0)
    }

    /// Writes `record` if the stored version equals `expected_version`
    /// (0 meaning "absent") and returns the new version.
    pub fn update<T: Record>(&self, record: &T, expected_version: u64) -> Result<u64, StoreError> {
        let id = record.record_id();
        validate_id(id)?;
        let lock = self.lock_for(T::KIND, id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let actual = self.read_envelope::<T>(id)?.map_or(0, |e| e.version);
        if actual != expected_version {
            return Err(StoreError::VersionConflict {
                kind: T::KIND,
                id: id.to_string(),
                expected: expected_version,
                actual,
            });
        }
        let next = actual + 1;
        self.write_envelope(record, next)?;
        Ok(next)
    }

    pub fn get<T: Record>(&self, id: &str) -> Result<Versioned<T>, StoreError> {
        validate_id(id)?;
        self.read_envelope::<T>(id)?
            .map(|e| Versioned {
                version: e.version,
                record: e.record,
            })
            .ok_or_else(|| StoreError::NotFound {
                kind: T::KIND,
                id: id.to_string(),
            })
    }

    pub fn exists<T: Record>(&self, id: &str) -> Result<bool, StoreError> {
        validate_id(id)?;
        Ok(self.path_for::<T>(id).is_file())
    }

    /// All records of a kind, ordered by id.
    pub fn list<T: Record>(&self) -> Result<Vec<Versioned<T>>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(T::KIND))? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(id) = name.strip_suffix(".json") {
                if validate_id(id).is_ok() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            // A record deleted between listing and reading is skipped.
            if let Some(e) = self.read_envelope::<T>(&id)? {
                out.push(Versioned {
                    version: e.version,
                    record: e.record,
                });
            }
        }
        Ok(out)
    }

    /// Photos owned by `owner`, optionally restricted to those featuring `member`.
    pub fn photos_for(
        &self,
        owner: &str,
        member: Option<&str>,
    ) -> Result<Vec<Versioned<Photo>>, StoreError> {
        Ok(self
            .list::<Photo>()?
            .into_iter()
            .filter(|p| p.record.owner.as_str() == owner)
            .filter(|p| member.is_none_or(|m| p.record.features(m)))
            .collect())
    }

    /// Summaries for `user`, oldest first.
    pub fn summaries_for(&self, user: &str) -> Result<Vec<ChatSummary>, StoreError> {
        let mut out: Vec<ChatSummary> = self
            .list::<ChatSummary>()?
            .into_iter()
            .map(|v| v.record)
            .filter(|s| s.user_id.as_str() == user)
            .collect();
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.summary_id.cmp(&b.summary_id))
        });
        Ok(out)
    }

    pub fn latest_summary_for(&self, user: &str) -> Result<Option<ChatSummary>, StoreError> {
        Ok(self.summaries_for(user)?.pop())
    }

    /// Stores image bytes and returns the blob reference.
    pub fn put_blob(&self, id: &str, bytes: &[u8]) -> Result<String, StoreError> {
        validate_id(id)?;
        write_atomically(&self.root.join("blobs").join(id), bytes)?;
        Ok(format!("blobs/{id}"))
    }

    pub fn get_blob(&self, id: &str) -> Result<Vec<u8>, StoreError> {
        validate_id(id)?;
        match fs::read(self.root.join("blobs").join(id)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound {
                kind: "blobs",
                id: id.to_string(),
            }),
            Err(e) => Err(e.into()),
        }
    }
}

fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
