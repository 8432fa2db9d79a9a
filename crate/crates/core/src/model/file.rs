//! Versioned model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "AECFMODL"
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (architecture, parameter
//!              shapes, byte order, training config snapshot)
//! parameters   f64 little-endian; for each parametric layer in order,
//!              the weight tensor then the bias tensor
//! checksum     32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AeModel, Architecture, Layer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::TrainConfig;

const MAGIC: &[u8; 8] = b"AECFMODL";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    byte_order: String,
    dtype: String,
    params: Vec<ParamEntry>,
    train_config: Option<TrainConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    layer: usize,
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
}

/// A loaded model and the training configuration it was saved with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: AeModel,
    pub train_config: Option<TrainConfig>,
}

pub(crate) fn encode(model: &AeModel, train_config: Option<&TrainConfig>, version: u32) -> Vec<u8> {
    let params = model
        .layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            l.params.as_ref().map(|(w, b)| ParamEntry {
                layer: i,
                weight_shape: w.shape().to_vec(),
                bias_shape: b.shape().to_vec(),
            })
        })
        .collect();
    let header = Header {
        architecture: model.architecture(),
        byte_order: "little".into(),
        dtype: "f64".into(),
        params,
        train_config: train_config.cloned(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (w, b) in model.layers().iter().filter_map(|l| l.params.as_ref()) {
        for v in w.data().iter().chain(b.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelFile> {
    let min = MAGIC.len() + 4 + 8 + CHECKSUM_LEN;
    if bytes.len() < min {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(Error::Checksum);
    }
    if &body[..8] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.byte_order != "little" || header.dtype != "f64" {
        return Err(Error::Format(format!(
            "unsupported encoding {} {}",
            header.byte_order, header.dtype
        )));
    }

    let mut values = body[header_end..].chunks_exact(8);
    if !values.remainder().is_empty() {
        return Err(Error::Format("parameter blob is not a whole number of f64".into()));
    }
    let mut read = |shape: &[usize]| -> Result<Tensor> {
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let chunk = values
                .next()
                .ok_or_else(|| Error::Format("parameter blob truncated".into()))?;
            data.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
        }
        Tensor::new(shape.to_vec(), data)
    };

    let arch = header.architecture;
    let mut entries = header.params.iter().peekable();
    let mut layers = Vec::with_capacity(arch.len());
    for (i, spec) in arch.layers().enumerate() {
        let params = match entries.peek() {
            Some(e) if e.layer == i => {
                let w = read(&e.weight_shape)?;
                let b = read(&e.bias_shape)?;
                entries.next();
                Some((w, b))
            }
            _ => None,
        };
        layers.push(Layer {
            spec: *spec,
            params,
        });
    }
    if entries.next().is_some() || values.next().is_some() {
        return Err(Error::Format("trailing parameter data".into()));
    }
    let model = AeModel::from_layers(&arch, layers)?;
    Ok(ModelFile {
        model,
        train_config: header.train_config,
    })
}

pub fn save_model(path: &Path, model: &AeModel, train_config: Option<&TrainConfig>) -> Result<()> {
    std::fs::write(path, encode(model, train_config, FORMAT_VERSION)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
