//! Adapter archives and the fine-tuning cache.
//!
//! An archive is a directory with `index.json` (one entry per key: dtype,
//! shape, byte offset, byte length, SHA-256) and `weights.bin`, the
//! concatenated row-major little-endian arrays in key order.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stablemorph_core::adapter::{DType, WeightData};
use stablemorph_core::{AdapterWeightMap, Provenance, WeightArray};

use crate::backend::{backend_error, FineTuneConfig, FineTuneJob, GenerationBackend};
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, sha256_hex, FieldHasher};

pub const FORMAT: &str = "stablemorph-adapter/1";
const INDEX: &str = "index.json";
const BLOB: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProvenanceRecord {
    FineTuned {
        image_ids: Vec<String>,
        steps: u32,
        seed: u64,
    },
    Merged {
        parent_a: String,
        parent_b: String,
        alpha: f64,
    },
}

impl From<&Provenance> for ProvenanceRecord {
    fn from(p: &Provenance) -> Self {
        match p {
            Provenance::FineTuned { image_ids, steps, seed } => ProvenanceRecord::FineTuned {
                image_ids: image_ids.clone(),
                steps: *steps,
                seed: *seed,
            },
            Provenance::Merged {
                parent_a,
                parent_b,
                alpha,
            } => ProvenanceRecord::Merged {
                parent_a: parent_a.clone(),
                parent_b: parent_b.clone(),
                alpha: *alpha,
            },
        }
    }
}

impl From<ProvenanceRecord> for Provenance {
    fn from(p: ProvenanceRecord) -> Self {
        match p {
            ProvenanceRecord::FineTuned { image_ids, steps, seed } => Provenance::FineTuned { image_ids, steps, seed },
            ProvenanceRecord::Merged {
                parent_a,
                parent_b,
                alpha,
            } => Provenance::Merged {
                parent_a,
                parent_b,
                alpha,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub format: String,
    pub subject_id: String,
    pub provenance: ProvenanceRecord,
    pub entries: Vec<IndexEntry>,
}

fn array_bytes(arr: &WeightArray) -> Vec<u8> {
    match arr.data() {
        WeightData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        WeightData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

/// In-memory encoding of an archive: (index, blob).
pub fn encode_archive(map: &AdapterWeightMap) -> (ArchiveIndex, Vec<u8>) {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(map.len());
    for (key, arr) in map.entries() {
        let bytes = array_bytes(arr);
        entries.push(IndexEntry {
            key: key.clone(),
            dtype: arr.dtype().as_str().to_string(),
            shape: arr.shape().to_vec(),
            offset: blob.len() as u64,
            length: bytes.len() as u64,
            checksum: sha256_hex(&bytes),
        });
        blob.extend_from_slice(&bytes);
    }
    let index = ArchiveIndex {
        format: FORMAT.to_string(),
        subject_id: map.subject_id().to_string(),
        provenance: map.provenance().into(),
        entries,
    };
    (index, blob)
}

pub fn decode_archive(index: &ArchiveIndex, blob: &[u8]) -> Result<AdapterWeightMap> {
    let bad = |why: String| Error::Integrity(format!("adapter archive: {why}"));
    if index.format != FORMAT {
        return Err(bad(format!("unsupported format {:?}", index.format)));
    }
    let mut entries = BTreeMap::new();
    for e in &index.entries {
        let dtype = DType::parse(&e.dtype).ok_or_else(|| bad(format!("{}: unknown dtype {}", e.key, e.dtype)))?;
        let start = e.offset as usize;
        let end = start
            .checked_add(e.length as usize)
            .filter(|&end| end <= blob.len())
            .ok_or_else(|| bad(format!("{}: byte range outside blob", e.key)))?;
        let bytes = &blob[start..end];
        if sha256_hex(bytes) != e.checksum {
            return Err(bad(format!("{}: checksum mismatch", e.key)));
        }
        if !bytes.len().is_multiple_of(dtype.size()) {
            return Err(bad(format!("{}: length not a multiple of {}", e.key, dtype.size())));
        }
        let data = match dtype {
            DType::F32 => WeightData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            DType::F64 => WeightData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
        };
        let arr = WeightArray::new(e.shape.clone(), data).map_err(|err| bad(format!("{}: {err}", e.key)))?;
        if entries.insert(e.key.clone(), arr).is_some() {
            return Err(bad(format!("duplicate key {}", e.key)));
        }
    }
    Ok(AdapterWeightMap::new(
        index.subject_id.clone(),
        entries,
        index.provenance.clone().into(),
    )?)
}

/// Writes `map` as a new archive directory. Fails if `dir` already exists
/// and is non-empty; the directory appears atomically.
pub fn write_archive(dir: &Path, map: &AdapterWeightMap) -> Result<()> {
    let (index, blob) = encode_archive(map);
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp = tempfile::Builder::new()
        .prefix(".adapter-")
        .tempdir_in(parent)
        .map_err(|e| Error::io(parent, e))?;
    let json = serde_json::to_vec_pretty(&index).expect("archive index serializes");
    fs::write(tmp.path().join(INDEX), json).map_err(|e| Error::io(tmp.path(), e))?;
    fs::write(tmp.path().join(BLOB), &blob).map_err(|e| Error::io(tmp.path(), e))?;
    let tmp_path = tmp.keep();
    if let Err(e) = fs::rename(&tmp_path, dir) {
        let _ = fs::remove_dir_all(&tmp_path);
        return Err(Error::io(dir, e));
    }
    Ok(())
}

pub fn read_archive(dir: &Path) -> Result<AdapterWeightMap> {
    let index_path = dir.join(INDEX);
    let index: ArchiveIndex = serde_json::from_str(&read_to_string(&index_path)?)
        .map_err(|e| Error::Integrity(format!("{}: {e}", index_path.display())))?;
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    decode_archive(&index, &blob)
}

#[derive(Debug, Clone)]
pub struct AdapterCache {
    dir: PathBuf,
}

impl AdapterCache {
    pub fn new(cache_root: &Path) -> Self {
        Self {
            dir: cache_root.join("adapters"),
        }
    }

    pub fn key(
        subject_id: &str,
        backend: &dyn GenerationBackend,
        config: &FineTuneConfig,
        images: &[(String, PathBuf)],
    ) -> String {
        let mut h = FieldHasher::new("stablemorph/adapter/1");
        h.str(subject_id).str(backend.name()).str(backend.version());
        h.str(&serde_json::to_string(config).expect("config serializes"));
        h.u64(images.len() as u64);
        for (id, path) in images {
            h.str(id).str(&path.to_string_lossy());
        }
        h.finish()
    }

    pub fn path(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn load(&self, key: &str) -> Result<Option<AdapterWeightMap>> {
        let dir = self.path(key);
        if !dir.join(INDEX).exists() {
            return Ok(None);
        }
        read_archive(&dir).map(Some)
    }

    /// Write-once store. An existing entry with different content is an
    /// integrity error.
    pub fn store(&self, key: &str, map: &AdapterWeightMap) -> Result<()> {
        let dir = self.path(key);
        match write_archive(&dir, map) {
            Ok(()) => Ok(()),
            Err(Error::Io { .. }) if dir.join(INDEX).exists() => {
                let existing = read_archive(&dir)?;
                if &existing != map {
                    return Err(Error::Integrity(format!(
                        "adapter cache entry {} exists with different content",
                        dir.display()
                    )));
                }
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}

/// Fine-tunes one subject adapter, served from cache when the same subject,
/// images, config and backend were seen before. Returns the map and whether
/// it came from the cache.
pub fn fine_tune(
    subject_id: &str,
    images: &[(String, PathBuf)],
    config: &FineTuneConfig,
    backend: &dyn GenerationBackend,
    cache: &AdapterCache,
) -> Result<(AdapterWeightMap, bool)> {
    if images.is_empty() {
        return Err(Error::input(format!("no fine-tuning images for subject {subject_id}")));
    }
    if !backend.capabilities().fine_tune {
        return Err(Error::Config(format!("backend {} cannot fine-tune", backend.name())));
    }
    let key = AdapterCache::key(subject_id, backend, config, images);
    if let Some(map) = cache.load(&key)? {
        return Ok((map, true));
    }
    let image_ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let paths: Vec<PathBuf> = images.iter().map(|(_, p)| p.clone()).collect();
    let job = FineTuneJob {
        subject_id,
        image_ids: &image_ids,
        images: &paths,
        config,
    };
    let entries = backend
        .fine_tune(&job)
        .map_err(|e| backend_error(backend.name(), format!("fine-tuning subject {subject_id}: {e}")))?;
    let map = AdapterWeightMap::new(
        subject_id,
        entries,
        Provenance::FineTuned {
            image_ids,
            steps: config.steps,
            seed: config.seed,
        },
    )
    .map_err(|e| backend_error(backend.name(), format!("fine-tuning subject {subject_id}: {e}")))?;
    cache.store(&key, &map)?;
    Ok((map, false))
}
