//! Named-tensor binary container.
//!
//! Layout: an 8-byte little-endian header length, a JSON header mapping each
//! tensor name to `{shape, dtype, byte_offset, byte_len}` plus an optional
//! `__metadata__` string map, then the row-major little-endian `f32` payload.
//! Names are stored in sorted order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METADATA_KEY: &str = "__metadata__";
const MAX_HEADER: u64 = 256 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Contract(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing tensor '{name}'")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        if !self.metadata.is_empty() {
            header.insert(
                METADATA_KEY.into(),
                serde_json::to_value(&self.metadata).expect("string map"),
            );
        }
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let len = (t.data.len() * 4) as u64;
            let e = Entry {
                shape: t.shape.clone(),
                dtype: "f32".into(),
                byte_offset: offset,
                byte_len: len,
            };
            header.insert(name.clone(), serde_json::to_value(e).expect("entry"));
            offset += len;
        }
        // serde_json::Map is a BTreeMap without the preserve_order feature.
        let json = serde_json::to_vec(&header).expect("header");
        let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(path, m);
        if bytes.len() < 8 {
            return Err(bad("truncated header length".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        if hlen > MAX_HEADER || 8 + hlen > bytes.len() as u64 {
            return Err(bad(format!("header length {hlen} exceeds file")));
        }
        let payload = &bytes[8 + hlen as usize..];
        let header: BTreeMap<String, serde_json::Value> =
            serde_json::from_slice(&bytes[8..8 + hlen as usize])
                .map_err(|e| bad(format!("header: {e}")))?;
        let mut file = TensorFile::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                file.metadata = serde_json::from_value(value)
                    .map_err(|e| bad(format!("metadata: {e}")))?;
                continue;
            }
            let e: Entry =
                serde_json::from_value(value).map_err(|e| bad(format!("tensor '{name}': {e}")))?;
            if e.dtype != "f32" {
                return Err(bad(format!("tensor '{name}' has unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            if e.byte_len != 4 * n as u64 || e.byte_offset + e.byte_len > payload.len() as u64 {
                return Err(bad(format!("tensor '{name}' extent out of bounds")));
            }
            let raw = &payload[e.byte_offset as usize..(e.byte_offset + e.byte_len) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            file.tensors.insert(name, Tensor { shape: e.shape, data });
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // Write-then-rename keeps the previous file intact on failure.
        let tmp = path.with_extension("partial");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
