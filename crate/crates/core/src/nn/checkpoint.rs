//! Named-tensor container: magic bytes, a length-prefixed JSON manifest
//! and little-endian `f32` payloads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MCKPT001";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    metadata: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode(tensors: &[(String, &Tensor<f32>)], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let manifest = serde_json::to_vec(&Manifest {
        metadata: metadata.clone(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + 4 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in tensors {
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub type Decoded = (BTreeMap<String, Tensor<f32>>, BTreeMap<String, String>);

pub fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad(path, "missing checkpoint header"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(mlen)
        .filter(|e| *e <= bytes.len())
        .ok_or_else(|| bad(path, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..body])?;
    let payload = &bytes[body..];
    let mut out = BTreeMap::new();
    for e in manifest.tensors {
        let end = e.offset.checked_add(e.len).ok_or_else(|| bad(path, "bad tensor extent"))?;
        if end * 4 > payload.len() {
            return Err(bad(path, format!("tensor {} runs past end of file", e.name)));
        }
        let values = payload[e.offset * 4..end * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(e.shape, values).map_err(|_| bad(path, format!("tensor {} has wrong length", e.name)))?;
        out.insert(e.name, t);
    }
    Ok((out, manifest.metadata))
}

pub fn save(path: &Path, tensors: &[(String, &Tensor<f32>)], metadata: &BTreeMap<String, String>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(tensors, metadata)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Decoded> {
    let bytes = fs::read(path).map_err(|e| bad(path, e.to_string()))?;
    decode(&bytes, path)
}
