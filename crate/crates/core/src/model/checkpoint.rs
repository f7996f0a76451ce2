use std::fs;
use std::path::Path;

use super::{build_template, Model, ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::fsio::{put_str, put_u32, write_atomic, Reader};

const MAGIC: &[u8; 4] = b"BNMD";
const VERSION: u32 = 1;

/// Serializes a model: magic, version, TOML config, then each named tensor
/// as (name, rank, dims, f64 little-endian values).
pub fn encode_model(m: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.params.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_str(&mut out, &m.config.to_toml());
    let named = m.params.named(&m.config);
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_str(&mut out, &name);
        put_u32(&mut out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, "model checkpoint");
    if bytes.len() < 4 || r.take(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig::from_toml(&r.str()?)
        .map_err(|e| Error::Corruption(format!("checkpoint config block: {e}")))?;
    let mut model = build_template(&config)
        .map_err(|e| Error::Corruption(format!("checkpoint config block: {e}")))?;
    let count = r.u32()? as usize;
    let mut named = model.params.named_mut(&config);
    if count != named.len() {
        return Err(Error::Corruption(format!(
            "checkpoint holds {count} tensors, configuration needs {}",
            named.len()
        )));
    }
    for (name, tensor) in named.iter_mut() {
        let got = r.str()?;
        if &got != name {
            return Err(Error::Corruption(format!("expected tensor {name}, found {got}")));
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != tensor.shape() {
            return Err(Error::Corruption(format!(
                "tensor {name} has shape {shape:?}, configuration needs {:?}",
                tensor.shape()
            )));
        }
        let raw = r.take(8 * tensor.len())?;
        for (v, chunk) in tensor.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    drop(named);
    if !r.is_empty() {
        return Err(Error::Corruption("trailing bytes after the last tensor".into()));
    }
    Ok(model)
}

pub fn save_model(m: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(m))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

/// Loads a checkpoint, failing with a variant error if it holds a different
/// variant than `expected`.
pub fn load_model_expecting(path: &Path, expected: Variant) -> Result<Model> {
    let m = load_model(path)?;
    if m.variant() != expected {
        return Err(Error::Variant(format!(
            "{} holds a {} model, expected {expected}",
            path.display(),
            m.variant()
        )));
    }
    Ok(m)
}
