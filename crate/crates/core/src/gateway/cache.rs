use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::Provider;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedReply {
    pub digest: String,
    pub model_id: String,
    pub reply: String,
}

/// Replies stored as `<root>/<provider>/<digest>.json`.
#[derive(Debug)]
pub struct DiskCache {
    root: PathBuf,
    // Readers share, writers are exclusive within the process; the rename
    // keeps files whole for other processes.
    lock: RwLock<()>,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            lock: RwLock::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, provider: Provider, digest: &str) -> PathBuf {
        self.root.join(provider.as_str()).join(format!("{digest}.json"))
    }

    pub fn get(&self, provider: Provider, digest: &str) -> io::Result<Option<CachedReply>> {
        let _guard = self.lock.read().expect("cache lock");
        let path = self.path_for(provider, digest);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        match serde_json::from_slice::<CachedReply>(&bytes) {
            Ok(entry) if entry.digest == digest => Ok(Some(entry)),
            // Corrupt or foreign entries are treated as misses and get overwritten.
            _ => {
                tracing::warn!(path = %path.display(), "ignoring unreadable cache entry");
                Ok(None)
            }
        }
    }

    pub fn put(&self, provider: Provider, entry: &CachedReply) -> io::Result<()> {
        let _guard = self.lock.write().expect("cache lock");
        let path = self.path_for(provider, &entry.digest);
        let dir = path.parent().expect("provider dir");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.{}.tmp", entry.digest, std::process::id()));
        {
            let mut file = fs::File::create(&tmp)?;
            file.write_all(&serde_json::to_vec_pretty(entry).map_err(io::Error::other)?)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, &path)
    }
}
