//! Raw little-endian payload plus a JSON sidecar at `<path>.json`.

use super::{GridError, LabelMap, Result, Volume};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    byte_order: String,
    order: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_header(path: &Path, dims: [usize; 3], spacing: [f64; 3], dtype: &str) -> Result<()> {
    let h = Header {
        dims,
        spacing,
        dtype: dtype.into(),
        byte_order: "little".into(),
        order: "x-fastest".into(),
    };
    let text = serde_json::to_string_pretty(&h).map_err(|e| GridError::Header(e.to_string()))?;
    fs::write(sidecar(path), text)?;
    Ok(())
}

fn read_header(path: &Path, dtype: &str) -> Result<Header> {
    let text = fs::read_to_string(sidecar(path))?;
    let h: Header = serde_json::from_str(&text).map_err(|e| GridError::Header(e.to_string()))?;
    if h.dtype != dtype {
        return Err(GridError::UnsupportedDtype(h.dtype));
    }
    if h.byte_order != "little" {
        return Err(GridError::Header(format!("byte order {:?}", h.byte_order)));
    }
    if h.order != "x-fastest" {
        return Err(GridError::Header(format!("axis order {:?}", h.order)));
    }
    Ok(h)
}

pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = vol.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes)?;
    write_header(path, vol.dims(), vol.spacing(), "float32")
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let h = read_header(path, "float32")?;
    let bytes = fs::read(path)?;
    let expected: usize = h.dims.iter().product();
    if bytes.len() != expected * 4 {
        return Err(GridError::LengthMismatch {
            expected,
            got: bytes.len() / 4,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(h.dims, h.spacing, data)
}

pub fn write_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, labels.labels())?;
    write_header(path, labels.dims(), labels.spacing(), "uint8")
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let h = read_header(path, "uint8")?;
    let bytes = fs::read(path)?;
    let expected: usize = h.dims.iter().product();
    if bytes.len() != expected {
        return Err(GridError::LengthMismatch {
            expected,
            got: bytes.len(),
        });
    }
    LabelMap::new(h.dims, h.spacing, bytes)
}
