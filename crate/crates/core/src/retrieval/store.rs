//! Persisted index layout:
//!
//! ```text
//! <dir>/manifest.json   {"format": 1, "n": N, "dim": D, "checksum": "<sha256 hex>"}
//! <dir>/vectors.bin     N*D little-endian f32, row-major
//! <dir>/passages.jsonl  one {"id","title","text"} per row
//! ```
//!
//! The checksum covers `vectors.bin` followed by `passages.jsonl`.

use std::fs;
use std::io::{BufRead, BufReader, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dense::{DenseIndex, IndexEntry};
use super::RetrievalError;

const MANIFEST: &str = "manifest.json";
const VECTORS: &str = "vectors.bin";
const PASSAGES: &str = "passages.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format: u32,
    pub n: usize,
    pub dim: usize,
    pub checksum: String,
}

fn checksum(vectors: &[u8], passages: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(vectors);
    hasher.update(passages);
    hex::encode(hasher.finalize())
}

pub fn save_index(index: &DenseIndex, dir: &Path) -> Result<IndexManifest, RetrievalError> {
    fs::create_dir_all(dir)?;
    let vectors: Vec<u8> = index.vectors().iter().flat_map(|x| x.to_le_bytes()).collect();
    let mut passages = Vec::new();
    for entry in index.entries() {
        serde_json::to_writer(&mut passages, entry).map_err(std::io::Error::other)?;
        passages.push(b'\n');
    }
    let manifest = IndexManifest {
        format: FORMAT_VERSION,
        n: index.len(),
        dim: index.dim(),
        checksum: checksum(&vectors, &passages),
    };
    fs::write(dir.join(VECTORS), &vectors)?;
    fs::write(dir.join(PASSAGES), &passages)?;
    let manifest_json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
    fs::write(dir.join(MANIFEST), manifest_json)?;
    Ok(manifest)
}

pub fn load_index(dir: &Path) -> Result<DenseIndex, RetrievalError> {
    let manifest: IndexManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)
        .map_err(|e| RetrievalError::Integrity(format!("unreadable manifest: {e}")))?;
    if manifest.format != FORMAT_VERSION {
        return Err(RetrievalError::Integrity(format!("unsupported index format {}", manifest.format)));
    }
    let vectors = fs::read(dir.join(VECTORS))?;
    let passages = fs::read(dir.join(PASSAGES))?;
    let actual = checksum(&vectors, &passages);
    if actual != manifest.checksum {
        return Err(RetrievalError::Integrity(format!(
            "checksum mismatch: manifest {}, files {actual}",
            manifest.checksum
        )));
    }
    if vectors.len() != manifest.n * manifest.dim * 4 {
        return Err(RetrievalError::Integrity(format!(
            "vectors.bin holds {} bytes, expected {}",
            vectors.len(),
            manifest.n * manifest.dim * 4
        )));
    }
    let vectors: Vec<f32> = vectors
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut entries = Vec::with_capacity(manifest.n);
    for (i, line) in BufReader::new(Cursor::new(passages)).lines().enumerate() {
        let entry: IndexEntry = serde_json::from_str(&line?).map_err(|e| RetrievalError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    if entries.len() != manifest.n {
        return Err(RetrievalError::Integrity(format!(
            "{} passages on disk, manifest says {}",
            entries.len(),
            manifest.n
        )));
    }
    Ok(DenseIndex::from_parts(manifest.dim, vectors, entries))
}
