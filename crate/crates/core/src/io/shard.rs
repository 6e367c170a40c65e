// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation shards: `b"RLSH" | i32 layer | u32 count | u32 d | count × d f32`,
//! all little-endian, rows in collection order.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const SHARD_MAGIC: &[u8; 4] = b"RLSH";
const HEADER_LEN: usize = 16;

/// One block of final-token activations collected at a single layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    pub layer: isize,
    pub rows: Matrix,
}

impl ActivationShard {
    pub fn count(&self) -> usize {
        self.rows.rows()
    }

    pub fn d(&self) -> usize {
        self.rows.cols()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.rows.as_slice().len());
        out.extend_from_slice(SHARD_MAGIC);
        out.extend_from_slice(&(self.layer as i32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.d() as u32).to_le_bytes());
        for &v in self.rows.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != SHARD_MAGIC {
            return Err(Error::CorruptBlob("not an activation shard".into()));
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let layer = i32::from_le_bytes(word(4)) as isize;
        let count = u32::from_le_bytes(word(8)) as usize;
        let d = u32::from_le_bytes(word(12)) as usize;
        let expected = count
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(Error::CorruptBlob(format!(
                "shard header says {count} × {d} but payload is {} bytes",
                bytes.len() - HEADER_LEN
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(Self {
            layer,
            rows: Matrix::from_vec(count, d, data)?,
        })
    }
}

pub fn shard_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("shard_{index:05}.bin"))
}

pub fn write_shard(path: &Path, shard: &ActivationShard) -> Result<()> {
    super::atomic_write(path, &shard.encode())
}

pub fn read_shard(path: &Path) -> Result<ActivationShard> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ActivationShard::decode(&bytes)
}

/// All `shard_*.bin` files in `dir`, in index order.
pub fn list_shards(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("shard_") && n.ends_with(".bin"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn read_shards(dir: &Path) -> Result<Vec<ActivationShard>> {
    list_shards(dir)?.iter().map(|p| read_shard(p)).collect()
}
