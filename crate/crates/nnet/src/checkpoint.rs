//! Parameter checkpoints: `SQNN` magic, format version, a JSON header with the
//! layer specs and parameter shapes, then every parameter as little-endian
//! `f32` in layer order.

use crate::{LayerSpec, Network, NnError, Real, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SQNN";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    seed: u64,
    layers: Vec<LayerSpec>,
    param_shapes: Vec<Vec<usize>>,
    dtype: String,
    byte_order: String,
}

pub fn save_checkpoint<T: Real>(net: &Network<T>) -> Vec<u8> {
    let header = Header {
        input_shape: net.input_shape().to_vec(),
        seed: net.seed(),
        layers: net.specs(),
        param_shapes: net.params().map(|p| p.shape().to_vec()).collect(),
        dtype: "float32".into(),
        byte_order: "little".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * net.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in net.params() {
        for &v in p.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let bad = |m: &str| NnError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing SQNN magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..hend]).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if header.dtype != "float32" || header.byte_order != "little" {
        return Err(bad("unsupported dtype or byte order"));
    }
    let mut net = Network::<T>::new(&header.input_shape, header.layers, header.seed)?;
    let shapes: Vec<Vec<usize>> = net.params().map(|p| p.shape().to_vec()).collect();
    if shapes != header.param_shapes {
        return Err(bad("parameter shapes disagree with layer specs"));
    }
    let payload = &bytes[hend..];
    if payload.len() != 4 * net.parameter_count() {
        return Err(NnError::Checkpoint(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            4 * net.parameter_count()
        )));
    }
    let mut chunks = payload.chunks_exact(4);
    for p in net.params_mut() {
        for v in p.data_mut() {
            let raw = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            *v = T::from_f64_lossy(raw as f64);
        }
    }
    Ok(net)
}

pub fn write_checkpoint<T: Real>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_checkpoint(net))?;
    Ok(())
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Network<T>> {
    load_checkpoint(&std::fs::read(path)?)
}

