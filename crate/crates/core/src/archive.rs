//! On-disk weight archive: `manifest.json` plus one little-endian `f32` blob.
//!
//! ```text
//! <dir>/manifest.json   {"format_version": "approxnet-archive/1",
//!                        "blob": "weights.bin",
//!                        "entries": [{"name", "dims", "offset", "len"}, ...]}
//! <dir>/weights.bin     concatenated f32 LE payloads
//! ```
//!
//! `offset` and `len` count elements, not bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ARCHIVE_VERSION: &str = "approxnet-archive/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "weights.bin";

/// Named tensors, iterated in name order.
pub type TensorSet = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: String,
    pub blob: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

pub fn save_archive(tensors: &TensorSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            dims: t.dims().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = ArchiveManifest {
        format_version: ARCHIVE_VERSION.to_string(),
        blob: BLOB_FILE.to_string(),
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let bpath = dir.join(BLOB_FILE);
    fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}

pub fn load_archive(dir: impl AsRef<Path>) -> Result<TensorSet> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: ArchiveManifest = serde_json::from_str(&text).map_err(|e| Error::Archive {
        entry: MANIFEST_FILE.to_string(),
        reason: format!("malformed manifest: {e}"),
    })?;
    let bpath = dir.join(&manifest.blob);
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    decode_archive(&manifest, &blob)
}

/// Checks a manifest against its blob and materializes the tensors.
pub fn decode_archive(manifest: &ArchiveManifest, blob: &[u8]) -> Result<TensorSet> {
    if manifest.format_version != ARCHIVE_VERSION {
        return Err(Error::Version {
            found: manifest.format_version.clone(),
            expected: ARCHIVE_VERSION.to_string(),
        });
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::Archive {
            entry: manifest.blob.clone(),
            reason: format!("blob size {} is not a multiple of 4", blob.len()),
        });
    }
    let total = blob.len() / 4;
    let mut out = TensorSet::new();
    for e in &manifest.entries {
        let expected: usize = e.dims.iter().product();
        if expected != e.len {
            return Err(Error::Archive {
                entry: e.name.clone(),
                reason: format!(
                    "shape {:?} needs {expected} elements but blob length is {}",
                    e.dims, e.len
                ),
            });
        }
        if e.offset + e.len > total {
            return Err(Error::Archive {
                entry: e.name.clone(),
                reason: format!(
                    "range {}..{} exceeds blob of {total} elements",
                    e.offset,
                    e.offset + e.len
                ),
            });
        }
        let data = blob[e.offset * 4..(e.offset + e.len) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(e.dims.clone(), data).map_err(|err| Error::Archive {
            entry: e.name.clone(),
            reason: err.to_string(),
        })?;
        if out.insert(e.name.clone(), t).is_some() {
            return Err(Error::Archive {
                entry: e.name.clone(),
                reason: "duplicate entry".into(),
            });
        }
    }
    Ok(out)
}
