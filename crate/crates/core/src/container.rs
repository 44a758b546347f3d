//! Tagged multi-section binary files.
//!
//! Layout: 4-byte magic, `u32` version, `u32` section count, then per
//! section a `u32` name length, the UTF-8 name, a `u64` payload length and
//! the payload. All integers little-endian.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContainerError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    Magic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated container at byte {0}")]
    Truncated(usize),
    #[error("trailing bytes after last section")]
    Trailing,
    #[error("section name is not UTF-8")]
    Name,
    #[error("missing section {0:?}")]
    Missing(String),
    #[error("section {0:?} is malformed: {1}")]
    Malformed(String, String),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, payload: Vec<u8>) -> &mut Self {
        self.sections.push((name.to_string(), payload));
        self
    }

    pub fn push_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> &mut Self {
        let bytes = serde_json::to_vec(value).expect("serialisable section");
        self.push(name, bytes)
    }

    pub fn get(&self, name: &str) -> Result<&[u8], ContainerError> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn get_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, ContainerError> {
        serde_json::from_slice(self.get(name)?)
            .map_err(|e| ContainerError::Malformed(name.to_string(), e.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn encode(&self, magic: [u8; 4], version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, payload) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn decode(bytes: &[u8], magic: [u8; 4], version: u32) -> Result<Self, ContainerError> {
        let mut r = Reader { bytes, pos: 0 };
        let found = r.take(4)?;
        if found != magic {
            return Err(ContainerError::Magic {
                expected: magic,
                found: found.to_vec(),
            });
        }
        let v = r.u32()?;
        if v != version {
            return Err(ContainerError::Version {
                expected: version,
                found: v,
            });
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count.min(64) as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| ContainerError::Name)?
                .to_string();
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| ContainerError::Truncated(r.pos))?;
            sections.push((name, r.take(len)?.to_vec()));
        }
        if r.pos != bytes.len() {
            return Err(ContainerError::Trailing);
        }
        Ok(Self { sections })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(ContainerError::Truncated(self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Little-endian `f64` payload.
pub fn f64s_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64s(name: &str, bytes: &[u8]) -> Result<Vec<f64>, ContainerError> {
    if bytes.len() % 8 != 0 {
        return Err(ContainerError::Malformed(
            name.to_string(),
            format!("{} bytes is not a whole number of f64", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
