//! Parameter checkpoints: a little-endian binary blob plus a JSON manifest.
//!
//! Blob layout: `b"HEICKPT\0"`, format version (`u32`), tensor count (`u32`),
//! then `(rows: u64, cols: u64)` per tensor, then every tensor's row-major
//! `f64` payload in the same order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HEICKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset of the payload inside the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub params: Vec<ManifestEntry>,
}

pub fn encode(store: &ParamStore) -> (Vec<u8>, Manifest) {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        buf.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
    }
    let mut params = Vec::with_capacity(store.len());
    for (_, p) in store.iter() {
        params.push(ManifestEntry {
            name: p.name.clone(),
            rows: p.value.rows(),
            cols: p.value.cols(),
            offset: buf.len(),
        });
        for x in p.value.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: crate::TOOL_VERSION.to_string(),
        params,
    };
    (buf, manifest)
}

pub fn decode(blob: &[u8], manifest: &Manifest) -> Result<Vec<(String, Tensor)>> {
    let bad = |msg: &str| Error::Serde(format!("checkpoint: {msg}"));
    if blob.len() < 16 || &blob[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(blob[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(blob[12..16].try_into().unwrap()) as usize;
    if count != manifest.params.len() {
        return Err(bad("manifest and blob disagree on tensor count"));
    }
    let mut shapes = Vec::with_capacity(count);
    let mut pos = 16;
    for _ in 0..count {
        let word = |p: usize| -> Result<usize> {
            blob.get(p..p + 8)
                .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| bad("truncated shape table"))
        };
        shapes.push((word(pos)?, word(pos + 8)?));
        pos += 16;
    }
    let mut out = Vec::with_capacity(count);
    for ((rows, cols), entry) in shapes.into_iter().zip(&manifest.params) {
        if (rows, cols) != (entry.rows, entry.cols) || entry.offset != pos {
            return Err(bad(&format!("manifest mismatch for {}", entry.name)));
        }
        let n = rows * cols;
        let bytes = blob
            .get(pos..pos + 8 * n)
            .ok_or_else(|| bad("truncated payload"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((entry.name.clone(), Tensor::from_vec(rows, cols, data)?));
        pos += 8 * n;
    }
    if pos != blob.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

pub fn save(store: &ParamStore, blob_path: &Path, manifest_path: &Path) -> Result<()> {
    let (blob, manifest) = encode(store);
    fs::write(blob_path, blob).map_err(|e| Error::io(blob_path, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(manifest_path, json).map_err(|e| Error::io(manifest_path, e))
}

pub fn load(blob_path: &Path, manifest_path: &Path) -> Result<Vec<(String, Tensor)>> {
    let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    decode(&blob, &manifest)
}

/// Copies loaded tensors into `store`, matching by name and position.
pub fn restore_into(store: &mut ParamStore, tensors: &[(String, Tensor)]) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, model has {}",
            tensors.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, (name, t)) in ids.into_iter().zip(tensors) {
        if store.name(id) != name || store.value(id).shape() != t.shape() {
            return Err(Error::Shape(format!("checkpoint tensor {name} does not fit")));
        }
        *store.value_mut(id) = t.clone();
    }
    Ok(())
}
