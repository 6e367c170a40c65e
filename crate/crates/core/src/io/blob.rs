// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor blob format.
//!
//! ```text
//! magic    b"RLNS1"
//! record*  u32 name_len | name (utf-8) | u32 rank | rank × u32 dim | f32 payload
//! ```
//!
//! All integers and floats are little-endian. Records run to end of file.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"RLNS1";

/// A named tensor held in `f64`, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            dims,
            data,
        }
    }
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let payload: usize = tensors
        .iter()
        .map(|t| 8 + t.name.len() + 4 * t.dims.len() + 4 * t.data.len())
        .sum();
    let mut out = Vec::with_capacity(MAGIC.len() + payload);
    out.extend_from_slice(MAGIC);
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::CorruptBlob("bad magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptBlob("tensor name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::CorruptBlob(format!("{name}: rank {rank} too large")));
        }
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CorruptBlob(format!("{name}: element count overflows")))?;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| {
            Error::CorruptBlob(format!("{name}: payload size overflows"))
        })?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push(Tensor { name, dims, data });
    }
    Ok(out)
}

pub fn write(path: &Path, tensors: &[Tensor]) -> Result<()> {
    super::atomic_write(path, &encode(tensors))
}

pub fn read(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Tensors keyed by name; a repeated name is an error.
pub fn index(tensors: Vec<Tensor>) -> Result<HashMap<String, Tensor>> {
    let mut map = HashMap::with_capacity(tensors.len());
    for t in tensors {
        let name = t.name.clone();
        if map.insert(name.clone(), t).is_some() {
            return Err(Error::CorruptBlob(format!("tensor `{name}` appears twice")));
        }
    }
    Ok(map)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptBlob(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_inverts_encode() {
        let ts = vec![
            Tensor::new("a", vec![2, 3], vec![1.0, -2.0, 0.5, 0.25, 3.0, 4.0]),
            Tensor::new("b", vec![], vec![7.0]),
        ];
        assert_eq!(decode(&encode(&ts)).unwrap(), ts);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(matches!(decode(b"NOPE!"), Err(Error::CorruptBlob(_))));
        let mut bytes = encode(&[Tensor::new("a", vec![4], vec![1.0; 4])]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode(&bytes), Err(Error::CorruptBlob(_))));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let t = Tensor::new("x", vec![1], vec![1.0]);
        assert!(index(vec![t.clone(), t]).is_err());
    }
}
