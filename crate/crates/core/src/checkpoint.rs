//! The tensor container shared by every model artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PLTC" | version: u32 | header_len: u64 | header JSON
//!        | tensor payloads in header order
//!        | provenance_len: u64 | provenance JSON
//! ```
//!
//! The header is `{"kind": .., "meta": .., "tensors": [{"name", "dtype", "shape"}, ..]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor};

pub const MAGIC: &[u8; 4] = b"PLTC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dtype: DType,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<NamedTensor>,
    pub provenance: Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: Value,
    tensors: Vec<TensorEntry>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Container { kind: kind.into(), meta, tensors: Vec::new(), provenance: Value::Null }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.push(NamedTensor { name: name.into(), dtype: DType::F64, tensor });
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.tensor)
            .ok_or_else(|| Error::Shape(format!("checkpoint has no tensor `{name}`")))
    }

    /// Take a tensor by name and check its shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("checkpoint has no tensor `{name}`")))?;
        let t = self.tensors.remove(pos).tensor;
        if t.shape != shape {
            return Err(Error::Shape(format!(
                "tensor `{name}` has shape {:?}, header expects {shape:?}",
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry { name: t.name.clone(), dtype: t.dtype, shape: t.tensor.shape.clone() })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let provenance = serde_json::to_vec(&self.provenance)?;
        let payload: usize = self.tensors.iter().map(|t| t.tensor.len() * t.dtype.size()).sum();
        let mut out = Vec::with_capacity(4 + 4 + 8 + header.len() + payload + 8 + provenance.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            match t.dtype {
                DType::F64 => t.tensor.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                DType::F32 => t
                    .tensor
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
            }
        }
        out.extend_from_slice(&(provenance.len() as u64).to_le_bytes());
        out.extend_from_slice(&provenance);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic bytes {magic:?}")));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version { found: version, expected: VERSION });
        }
        let hlen = r.u64("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen, "header")?)
            .map_err(|e| Error::Format(format!("header JSON: {e}")))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = r.take(n * entry.dtype.size(), &format!("tensor `{}`", entry.name))?;
            let data: Vec<f64> = match entry.dtype {
                DType::F64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            };
            tensors.push(NamedTensor { name: entry.name, dtype: entry.dtype, tensor: Tensor { shape: entry.shape, data } });
        }
        let plen = r.u64("provenance length")? as usize;
        let provenance: Value = serde_json::from_slice(r.take(plen, "provenance")?)
            .map_err(|e| Error::Format(format!("provenance JSON: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Container { kind: header.kind, meta: header.meta, tensors, provenance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Incompatible(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex SHA-256 of arbitrary bytes; used for corpus, config and vocabulary hashes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new("test", json!({"arch": {"d": 2}}));
        c.push("a", Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap());
        c.tensors.push(NamedTensor {
            name: "half".into(),
            dtype: DType::F32,
            tensor: Tensor::from_vec(&[3], vec![0.5, 1.5, -4.0]).unwrap(),
        });
        c.provenance = json!({"tool_version": "x"});
        c
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_and_truncation_are_distinct_errors() {
        let mut bytes = sample().to_bytes().unwrap();
        let good = bytes.clone();
        bytes[4] = 9;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
        for cut in [3, 10, 20, good.len() - 1] {
            assert!(matches!(Container::from_bytes(&good[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn take_checks_shape() {
        let mut c = sample();
        assert!(matches!(c.take("a", &[4]), Err(Error::Shape(_))));
        let mut c = sample();
        assert_eq!(c.take("a", &[2, 2]).unwrap().data[1], -2.5);
    }
}
