//! Model checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HVFLCKPT"
//! version  u32      1
//! meta_len u64      length of the metadata block
//! meta     bytes    UTF-8 JSON: model structure with tensor payloads elided
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8), rows u32, cols u32,
//!   rows * cols f64 values, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::mat::Mat;
use super::model::{CentralModel, ModelBundle, ParamStore};
use super::NnError;

pub const MAGIC: &[u8; 8] = b"HVFLCKPT";
pub const VERSION: u32 = 1;

/// Models that keep all weights in one [`ParamStore`].
pub trait Checkpoint: Serialize + DeserializeOwned + Clone {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl Checkpoint for ModelBundle {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl Checkpoint for CentralModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

pub fn to_bytes<M: Checkpoint>(model: &M) -> Result<Vec<u8>, NnError> {
    let mut skeleton = model.clone();
    let store = model.store();
    skeleton.store_mut().values.iter_mut().for_each(|m| *m = Mat::zeros(0, 0));
    let meta = serde_json::to_vec(&skeleton).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(meta.len() + 8 * store.count() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, m) in store.names.iter().zip(&store.values) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols as u32).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.0.len() < n {
            return Err(NnError::Checkpoint("truncated".into()));
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<M: Checkpoint>(buf: &[u8]) -> Result<M, NnError> {
    let mut c = Cursor(buf);
    if c.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = c.u64()? as usize;
    let meta = c.take(meta_len)?;
    let mut model: M = serde_json::from_slice(meta).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let count = c.u32()? as usize;
    if count != model.store().len() {
        return Err(NnError::Checkpoint(format!("{count} tensors for {} parameters", model.store().len())));
    }
    for _ in 0..count {
        let nl = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nl)?).map_err(|e| NnError::Checkpoint(e.to_string()))?.to_string();
        let rows = c.u32()? as usize;
        let cols = c.u32()? as usize;
        let raw = c.take(rows * cols * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let id = model.store().id(&name).ok_or_else(|| NnError::Checkpoint(format!("unknown tensor {name}")))?;
        model.store_mut().values[id] = Mat::from_vec(rows, cols, data);
    }
    if !c.0.is_empty() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save<M: Checkpoint>(model: &M, path: &Path) -> Result<(), NnError> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    f.write_all(&bytes).map_err(|e| NnError::Checkpoint(e.to_string()))
}

pub fn load<M: Checkpoint>(path: &Path) -> Result<M, NnError> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&buf)
}

/// Hex SHA-256 of the serialised checkpoint.
pub fn digest<M: Checkpoint>(model: &M) -> Result<String, NnError> {
    Ok(hex_string(&Sha256::digest(to_bytes(model)?)))
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
