//! Checkpoint file: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header, then raw little-endian tensor payloads in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Float, ModelConfig, ModelState};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FACTLAB\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Model parameters plus optional named extra buffers (optimizer moments)
/// and free-form metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Float> {
    pub model: ModelState<T>,
    pub extra: Vec<(String, Vec<T>)>,
    pub meta: serde_json::Value,
}

pub fn save_checkpoint<T: Float>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut tensors = vec![TensorInfo {
        name: "params".into(),
        len: ckpt.model.params.len(),
    }];
    tensors.extend(ckpt.extra.iter().map(|(name, v)| TensorInfo {
        name: name.clone(),
        len: v.len(),
    }));
    let header = Header {
        version: CHECKPOINT_VERSION,
        dtype: T::DTYPE.into(),
        config: ckpt.model.config.clone(),
        tensors,
        meta: ckpt.meta.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + header.len() + ckpt.model.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend(T::to_le_bytes_vec(&ckpt.model.params));
    for (_, v) in &ckpt.extra {
        buf.extend(T::to_le_bytes_vec(v));
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Float>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} tensors, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let width = std::mem::size_of::<T>();
    let mut at = 16 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let end = at + t.len * width;
        let raw = bytes
            .get(at..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated tensor `{}`", t.name)))?;
        tensors.push((t.name.clone(), T::from_le_bytes_slice(raw)));
        at = end;
    }
    if at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    let mut tensors = tensors.into_iter();
    let (_, params) = tensors
        .next()
        .ok_or_else(|| Error::Checkpoint("no parameter tensor".into()))?;
    let model = ModelState::from_params(header.config, params)?;
    Ok(Checkpoint {
        model,
        extra: tensors.collect(),
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = init_model::<f32>(&ModelConfig::new(1, 8, 16, 2), 4).unwrap();
        let ckpt = Checkpoint {
            model: model.clone(),
            extra: vec![("adam.m".into(), vec![1.5f32, -2.0])],
            meta: serde_json::json!({"epoch": 3}),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.extra, ckpt.extra);
        assert_eq!(back.meta["epoch"], 3);
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad");
        fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint(_))));
    }
}
