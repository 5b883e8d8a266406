//! Identity extraction through a recognition backend, with an on-disk
//! cache.
//!
//! Cache file layout: the magic `SMIDENT1`, a little-endian `u32` header
//! length, a JSON header (subject ID, backend, `n`, `d`, source image IDs),
//! then `n·d` row-major little-endian `f64` values. A `.sha256` sidecar
//! holds the hex digest of the whole file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stablemorph_core::IdentityMatrix;

use crate::backend::{backend_error, RecognitionBackend};
use crate::error::{Error, Result};
use crate::fsutil::{create_once, sha256_hex, FieldHasher};

const MAGIC: &[u8; 8] = b"SMIDENT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityHeader {
    pub subject_id: String,
    pub backend: String,
    pub n: usize,
    pub d: usize,
    pub source_image_ids: Vec<String>,
}

pub fn encode_identity(m: &IdentityMatrix, backend: &str) -> Vec<u8> {
    let header = IdentityHeader {
        subject_id: m.subject_id().to_string(),
        backend: backend.to_string(),
        n: m.n(),
        d: m.dim(),
        source_image_ids: m.source_image_ids().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("identity header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 8 * m.as_row_major().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in m.as_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_identity(bytes: &[u8]) -> Result<(IdentityMatrix, IdentityHeader)> {
    let bad = |why: &str| Error::Integrity(format!("identity file: {why}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: IdentityHeader = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let data = &bytes[12 + hlen..];
    if data.len() != header.n * header.d * 8 {
        return Err(bad("data length does not match n·d"));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = IdentityMatrix::from_row_major(
        header.subject_id.clone(),
        header.source_image_ids.clone(),
        header.d,
        values,
    )?;
    Ok((m, header))
}

#[derive(Debug, Clone)]
pub struct IdentityCache {
    dir: PathBuf,
}

impl IdentityCache {
    pub fn new(cache_root: &Path) -> Self {
        Self {
            dir: cache_root.join("identity"),
        }
    }

    /// Key over subject, backend name/version and the ordered image list.
    pub fn key(subject_id: &str, backend: &dyn RecognitionBackend, images: &[(String, PathBuf)]) -> String {
        let mut list = FieldHasher::new("stablemorph/image-list/1");
        list.u64(images.len() as u64);
        for (id, path) in images {
            list.str(id).str(&path.to_string_lossy());
        }
        let list = list.finish();
        let mut h = FieldHasher::new("stablemorph/identity/1");
        h.str(subject_id).str(backend.name()).str(backend.version()).str(&list);
        h.finish()
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let file = self.dir.join(format!("{key}.smid"));
        let sidecar = self.dir.join(format!("{key}.smid.sha256"));
        (file, sidecar)
    }

    pub fn load(&self, key: &str) -> Result<Option<IdentityMatrix>> {
        let (file, sidecar) = self.paths(key);
        let Ok(sum) = fs::read_to_string(&sidecar) else {
            return Ok(None);
        };
        let bytes = match fs::read(&file) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&file, e)),
        };
        if sha256_hex(&bytes) != sum.trim() {
            return Err(Error::Integrity(format!("checksum mismatch for {}", file.display())));
        }
        decode_identity(&bytes).map(|(m, _)| Some(m))
    }

    pub fn store(&self, key: &str, m: &IdentityMatrix, backend: &str) -> Result<()> {
        let (file, sidecar) = self.paths(key);
        let bytes = encode_identity(m, backend);
        if !create_once(&file, &bytes)? {
            // A concurrent extractor won the race, or a previous run died
            // before writing the sidecar; either way the content must agree.
            let existing = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            if existing != bytes {
                return Err(Error::Integrity(format!(
                    "identity cache entry {} exists with different content",
                    file.display()
                )));
            }
        }
        create_once(&sidecar, sha256_hex(&bytes).as_bytes())?;
        Ok(())
    }
}

/// Embeds each image in order; serves from cache when possible. Returns the
/// matrix and whether it came from the cache.
pub fn extract_identity(
    subject_id: &str,
    images: &[(String, PathBuf)],
    backend: &dyn RecognitionBackend,
    cache: &IdentityCache,
) -> Result<(IdentityMatrix, bool)> {
    if images.is_empty() {
        return Err(Error::input(format!("no identity images for subject {subject_id}")));
    }
    let key = IdentityCache::key(subject_id, backend, images);
    if let Some(m) = cache.load(&key)? {
        return Ok((m, true));
    }
    let mut rows = Vec::with_capacity(images.len());
    for (pos, (id, path)) in images.iter().enumerate() {
        let row = backend.embed(path).map_err(|e| {
            backend_error(
                backend.name(),
                format!("subject {subject_id}, image {id} (position {}): {e}", pos + 1),
            )
        })?;
        if row.len() != backend.embedding_dim() {
            return Err(backend_error(
                backend.name(),
                format!(
                    "image {id}: embedding has dimension {}, backend declares {}",
                    row.len(),
                    backend.embedding_dim()
                ),
            ));
        }
        rows.push(row);
    }
    let ids = images.iter().map(|(id, _)| id.clone()).collect();
    let m = IdentityMatrix::from_rows(subject_id, ids, rows)?;
    cache.store(&key, &m, backend.name())?;
    Ok((m, false))
}
