//! JSON-headed little-endian float64 tensor container.
//!
//! Layout:
//!
//! ```text
//! offset 0   8 bytes   magic  b"HSTENSOR"
//! offset 8   u64 LE    header length N in bytes
//! offset 16  N bytes   UTF-8 JSON header
//! offset 16+N          f64 LE payload, tensors concatenated in header order,
//!                      each row-major (last index fastest)
//! ```
//!
//! Header: `{"tensors": [{"name": str, "shape": [usize, ..]}, ..], "meta": {..}}`.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSTENSOR";
const FORMAT: &str = "tensor";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub meta: Map<String, Value>,
    pub tensors: Vec<NamedTensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::param(format!(
                "tensor {name}: shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::param(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::input(format!("missing tensor {name}")))
    }

    /// Fetch a tensor and check its shape; `None` entries are wildcards.
    pub fn get_shaped(&self, name: &str, shape: &[Option<usize>]) -> Result<&NamedTensor> {
        let t = self.get(name)?;
        let ok = t.shape.len() == shape.len()
            && t.shape.iter().zip(shape).all(|(a, b)| b.is_none_or(|b| *a == b));
        if !ok {
            return Err(Error::input(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::input(format!("missing numeric meta field {key}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::input(format!("missing integer meta field {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        let mut len = [0u8; 8];
        LittleEndian::write_u64(&mut len, header.len() as u64);
        out.extend_from_slice(&len);
        out.extend_from_slice(&header);
        let mut buf = [0u8; 8];
        for t in &self.tensors {
            for &v in &t.data {
                LittleEndian::write_f64(&mut buf, v);
                out.extend_from_slice(&buf);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let malformed = |offset: usize, message: String| Error::Malformed {
            format: FORMAT,
            path: path.to_path_buf(),
            location: format!("byte {offset}"),
            message,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(malformed(0, "missing HSTENSOR magic".into()));
        }
        let header_len = LittleEndian::read_u64(&bytes[8..16]) as usize;
        let payload_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| malformed(8, format!("header length {header_len} exceeds file")))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| malformed(16 + e.column().saturating_sub(1), e.to_string()))?;
        let mut offset = payload_start;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(malformed(
                    offset,
                    format!("tensor {} truncated: needs {n} values", entry.name),
                ));
            }
            let mut data = vec![0.0; n];
            LittleEndian::read_f64_into(&bytes[offset..end], &mut data);
            offset = end;
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if offset != bytes.len() {
            return Err(malformed(offset, "trailing bytes after payload".into()));
        }
        Ok(TensorFile {
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
