//! The "PSFT" tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"PSFT"
//! version u16 (= 1)
//! entry*  u16 name_len | name (UTF-8) | u8 dtype (0 = f32) | u8 ndim
//!         | u32 dims[ndim] | payload (f32 LE, row-major)
//! ```
//!
//! Entries run until end of file. Files with a `.json` extension are read as
//! an object mapping names to nested number arrays instead.

use std::path::Path;

use indexmap::IndexMap;
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSFT";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(rows, cols)` for a 2-D tensor.
    pub fn shape2(&self) -> Option<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Format(format!("dimension overflow in {dims:?}")))
    })
}

pub type TensorMap = IndexMap<String, Tensor>;

pub fn encode_container(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("tensor name too long: {name}")))?;
        let ndim = u8::try_from(t.dims.len())
            .map_err(|_| Error::Format(format!("{name}: too many dimensions")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(ndim);
        for &d in &t.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::Format(format!("{name}: dimension {d} exceeds u32")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf.reserve(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Format(format!("truncated {what} at byte offset {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<TensorMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic bytes, expected PSFT".into()));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mut out = TensorMap::new();
    while !cur.done() {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("{name}: unsupported dtype tag {dtype}")));
        }
        let ndim = cur.u8("ndim")? as usize;
        let dims = (0..ndim)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = element_count(&dims)?;
        let n_bytes = n
            .checked_mul(4)
            .ok_or_else(|| Error::Format(format!("{name}: dimension overflow")))?;
        let payload = cur.take(n_bytes, &format!("payload of {name}"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(name.clone(), Tensor { dims, data }).is_some() {
            return Err(Error::Format(format!("duplicate tensor name {name}")));
        }
    }
    Ok(out)
}

pub fn save_tensor_container(path: impl AsRef<Path>, tensors: &TensorMap) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a PSFT file, or a JSON tensor fixture when the extension is `.json`.
pub fn load_tensor_container(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let value: Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        tensors_from_json(&value)
    } else {
        decode_container(&bytes)
    }
}

fn tensors_from_json(value: &Value) -> Result<TensorMap> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Format("JSON tensor file must be an object".into()))?;
    let mut out = TensorMap::new();
    for (name, v) in obj {
        let t = match v {
            Value::Array(items) if items.iter().all(Value::is_array) && !items.is_empty() => {
                let rows = items
                    .iter()
                    .map(|row| json_numbers(row, name))
                    .collect::<Result<Vec<_>>>()?;
                let cols = rows[0].len();
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(Error::Format(format!("{name}: ragged rows")));
                }
                let n = rows.len();
                Tensor::matrix(n, cols, rows.into_iter().flatten().collect())?
            }
            Value::Array(_) => Tensor::vector(json_numbers(v, name)?),
            _ => return Err(Error::Format(format!("{name}: expected an array"))),
        };
        out.insert(name.clone(), t);
    }
    Ok(out)
}

fn json_numbers(v: &Value, name: &str) -> Result<Vec<f32>> {
    v.as_array()
        .ok_or_else(|| Error::Format(format!("{name}: expected an array")))?
        .iter()
        .map(|x| {
            x.as_f64()
                .map(|f| f as f32)
                .ok_or_else(|| Error::Format(format!("{name}: non-numeric entry {x}")))
        })
        .collect()
}
