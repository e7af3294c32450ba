//! Checkpoint format: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header (format version, config, value width, tensor table), then the
//! raw little-endian tensor data in table order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Model, ModelConfig, ModelError, Real};

pub const MAGIC: &[u8; 8] = b"OCCLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Bytes per stored value: 4 or 8.
    pub value_bytes: usize,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training metadata.
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<F: Real, W: Write>(model: &Model<F>, meta: serde_json::Value, mut w: W) -> Result<(), ModelError> {
    let value_bytes = std::mem::size_of::<F>();
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        value_bytes,
        config: model.config.clone(),
        tensors: model
            .params
            .iter()
            .map(|(name, v)| TensorEntry { name: name.to_string(), rows: v.nrows(), cols: v.ncols() })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, v) in model.params.iter() {
        for &x in v.iter() {
            match value_bytes {
                4 => w.write_all(&(x.as_f64() as f32).to_le_bytes())?,
                _ => w.write_all(&x.as_f64().to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_header<R: Read>(r: &mut R) -> Result<CheckpointHeader, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 26 {
        return Err(bad(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.version)));
    }
    if header.value_bytes != 4 && header.value_bytes != 8 {
        return Err(bad(format!("unsupported value width {}", header.value_bytes)));
    }
    Ok(header)
}

/// Rebuild a model from a checkpoint. Values stored at a different width are
/// converted.
pub fn read_checkpoint<F: Real, R: Read>(mut r: R) -> Result<(Model<F>, CheckpointHeader), ModelError> {
    let header = read_header(&mut r)?;
    let mut model = Model::<F>::new(header.config.clone(), 0)?;
    if header.tensors.len() != model.params.len() {
        return Err(bad(format!(
            "checkpoint has {} tensors, configuration expects {}",
            header.tensors.len(),
            model.params.len()
        )));
    }
    let mut buf = [0u8; 8];
    for t in &header.tensors {
        let mut values = Vec::with_capacity(t.rows * t.cols);
        for _ in 0..t.rows * t.cols {
            let bytes = &mut buf[..header.value_bytes];
            r.read_exact(bytes).map_err(|e| bad(format!("tensor {}: {e}", t.name)))?;
            let v = match header.value_bytes {
                4 => f64::from(f32::from_le_bytes(bytes.try_into().expect("4 bytes"))),
                _ => f64::from_le_bytes(bytes.try_into().expect("8 bytes")),
            };
            values.push(F::lit(v));
        }
        let arr = Array2::from_shape_vec((t.rows, t.cols), values).map_err(|e| bad(e.to_string()))?;
        model.params.set(&t.name, arr)?;
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((model, header))
}

pub fn save_checkpoint<F: Real>(model: &Model<F>, meta: serde_json::Value, path: &Path) -> Result<(), ModelError> {
    write_checkpoint(model, meta, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(Model<F>, CheckpointHeader), ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
