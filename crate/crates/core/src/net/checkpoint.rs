//! Single-file checkpoint archive.
//!
//! Layout: the magic line `MTRA1\n`, a little-endian `u64` header length,
//! a JSON header (model config, seed, dtype, tensor table, free-form
//! metadata), then the raw little-endian tensor data.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, MtraUnet, ParamKind};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"MTRA1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    seed: u64,
    dtype: String,
    tensors: Vec<TensorEntry>,
    metadata: serde_json::Value,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let flat = t.flatten_all()?;
    match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
    Ok(())
}

/// Writes `model` and arbitrary JSON `metadata` to `path`.
pub fn save_checkpoint(path: &Path, model: &MtraUnet, metadata: &serde_json::Value) -> Result<()> {
    let dtype = model.dtype();
    let mut data = Vec::new();
    let mut tensors = Vec::new();
    for (name, var, kind) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: var.dims().to_vec(),
            trainable: kind == ParamKind::Trainable,
            offset: data.len(),
        });
        tensor_bytes(var.as_tensor(), &mut data)?;
    }
    let header = Header {
        format: "MTRA1".into(),
        config: model.config().clone(),
        seed: model.config().seed,
        dtype: dtype_name(dtype)?.into(),
        tensors,
        metadata: metadata.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let write = |file: &mut fs::File, bytes: &[u8]| {
        file.write_all(bytes)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write(&mut file, CHECKPOINT_MAGIC)?;
    write(&mut file, &(header.len() as u64).to_le_bytes())?;
    write(&mut file, &header)?;
    write(&mut file, &data)
}

/// Reads a checkpoint, rebuilding the model on `device`.
pub fn load_checkpoint(path: &Path, device: &Device) -> Result<(MtraUnet, serde_json::Value)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let rest = bytes.strip_prefix(CHECKPOINT_MAGIC).ok_or_else(|| bad("missing MTRA1 magic"))?;
    if rest.len() < 8 {
        return Err(bad("truncated header length"));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&rest[..header_len]).map_err(|e| bad(&format!("invalid header: {e}")))?;
    let data = &rest[header_len..];

    let (dtype, width) = match header.dtype.as_str() {
        "f32" => (DType::F32, 4),
        "f64" => (DType::F64, 8),
        other => return Err(bad(&format!("unsupported dtype {other}"))),
    };
    let model = MtraUnet::new(header.config, dtype, device)?;

    let mut values = BTreeMap::new();
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let chunk = data
            .get(entry.offset..entry.offset + count * width)
            .ok_or_else(|| bad(&format!("tensor {} out of bounds", entry.name)))?;
        let t = match dtype {
            DType::F32 => {
                let v: Vec<f32> = chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, entry.shape.as_slice(), device)?
            }
            _ => {
                let v: Vec<f64> = chunk
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, entry.shape.as_slice(), device)?
            }
        };
        values.insert(entry.name.clone(), t);
    }
    let expected = model.params().iter().count();
    if values.len() != expected {
        return Err(bad(&format!("holds {} tensors, model has {expected}", values.len())));
    }
    model.params().restore(&values)?;
    Ok((model, header.metadata))
}
