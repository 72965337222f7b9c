use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// What is persisted for one completed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    /// Canonical request the key was derived from; kept for inspection.
    pub request: String,
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub approximate_usage: bool,
    pub cost_usd: f64,
    pub latency_ms: f64,
}

/// On-disk response store: `<root>/<endpoint name>/<key>.json`.
///
/// Entries are written to a temporary file and renamed into place, so readers
/// never observe a partial record and concurrent writers of one key are safe.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn endpoint_dir(&self, endpoint: &str) -> PathBuf {
        let safe: String = endpoint
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
            .collect();
        self.root.join(safe)
    }

    pub fn path_for(&self, endpoint: &str, key: &str) -> PathBuf {
        self.endpoint_dir(endpoint).join(format!("{key}.json"))
    }

    pub async fn get(&self, endpoint: &str, key: &str) -> io::Result<Option<CacheRecord>> {
        let path = self.path_for(endpoint, key);
        match tokio::fs::read(&path).await {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub async fn put(&self, endpoint: &str, key: &str, record: &CacheRecord) -> io::Result<()> {
        let dir = self.endpoint_dir(endpoint);
        let path = self.path_for(endpoint, key);
        let bytes = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
        tokio::task::spawn_blocking(move || {
            std::fs::create_dir_all(&dir)?;
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(&bytes)?;
            tmp.persist(&path).map_err(|e| e.error)?;
            Ok(())
        })
        .await
        .map_err(io::Error::other)?
    }
}
