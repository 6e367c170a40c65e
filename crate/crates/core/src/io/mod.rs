// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats: tensor blobs, model directories, activation shards and
//! JSONL pair/probe files.

pub mod blob;
pub mod model_dir;
pub mod pairs;
pub mod shard;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use model_dir::{fingerprint, load_model, save_model};
pub use pairs::{read_pairs, read_probes};
pub use shard::{read_shards, ActivationShard};

/// Write `bytes` to a temporary file next to `path`, then rename it into
/// place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
