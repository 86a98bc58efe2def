//! Single-file binary container for named tensors and JSON manifests.
//!
//! Layout: magic `SVC1` (4 bytes) · version u32 LE · header_len u64 LE ·
//! UTF-8 JSON header (an index array of `{name, dtype, shape, byte_offset}`)
//! · payload. Tensor entries have dtype `"f32"` and row-major little-endian
//! payload bytes; manifest entries have dtype `"json"`, shape `[byte_len]`
//! and a raw UTF-8 JSON payload that is preserved byte-for-byte across
//! load/save round trips.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 4] = b"SVC1";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a container file)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: {0}")]
    TruncatedPayload(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensorName(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("overlapping payload ranges for {0:?}")]
    OverlappingPayload(String),
    #[error("missing entry {0:?}")]
    MissingEntry(String),
    #[error("entry {0:?} has the wrong kind")]
    WrongKind(String),
}

#[derive(Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    F32(Tensor<f32>),
    Json(Vec<u8>),
}

/// In-memory view of a container file. Entry order is preserved.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    entries: Vec<(String, Payload)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_name(&self, name: &str) -> Result<(), ContainerError> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(ContainerError::DuplicateTensorName(name.to_string()));
        }
        Ok(())
    }

    pub fn insert_tensor(&mut self, name: &str, tensor: Tensor<f32>) -> Result<(), ContainerError> {
        self.check_name(name)?;
        self.entries.push((name.to_string(), Payload::F32(tensor)));
        Ok(())
    }

    pub fn insert_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), ContainerError> {
        self.check_name(name)?;
        let bytes = serde_json::to_vec(value)
            .map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
        self.entries.push((name.to_string(), Payload::Json(bytes)));
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>, ContainerError> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Payload::F32(t))) => Ok(t),
            Some(_) => Err(ContainerError::WrongKind(name.to_string())),
            None => Err(ContainerError::MissingEntry(name.to_string())),
        }
    }

    pub fn json<T: DeserializeOwned>(&self, name: &str) -> Result<T, ContainerError> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, Payload::Json(bytes))) => serde_json::from_slice(bytes)
                .map_err(|e| ContainerError::MalformedHeader(format!("{name}: {e}"))),
            Some(_) => Err(ContainerError::WrongKind(name.to_string())),
            None => Err(ContainerError::MissingEntry(name.to_string())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut index = Vec::with_capacity(self.entries.len());
        let mut payload: Vec<u8> = Vec::new();
        for (name, entry) in &self.entries {
            let offset = payload.len() as u64;
            match entry {
                Payload::F32(t) => {
                    for v in t.data() {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                    index.push(IndexEntry {
                        name: name.clone(),
                        dtype: "f32".into(),
                        shape: t.shape().to_vec(),
                        byte_offset: offset,
                    });
                }
                Payload::Json(bytes) => {
                    payload.extend_from_slice(bytes);
                    index.push(IndexEntry {
                        name: name.clone(),
                        dtype: "json".into(),
                        shape: vec![bytes.len()],
                        byte_offset: offset,
                    });
                }
            }
        }
        let header = serde_json::to_vec(&index).expect("index serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 16 {
            return Err(ContainerError::TruncatedPayload(
                "file shorter than fixed header".into(),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let payload_start = 16usize.checked_add(header_len).ok_or_else(|| {
            ContainerError::TruncatedPayload("header length overflows".into())
        })?;
        if payload_start > bytes.len() {
            return Err(ContainerError::TruncatedPayload(
                "header extends past end of file".into(),
            ));
        }
        let index: Vec<IndexEntry> = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
        let payload = &bytes[payload_start..];

        let mut entries: Vec<(String, Payload)> = Vec::with_capacity(index.len());
        let mut ranges: Vec<(u64, u64, String)> = Vec::new();
        for entry in index {
            if entries.iter().any(|(n, _)| *n == entry.name) {
                return Err(ContainerError::DuplicateTensorName(entry.name));
            }
            let byte_len = match entry.dtype.as_str() {
                "f32" => entry.shape.iter().product::<usize>() as u64 * 4,
                "json" => {
                    if entry.shape.len() != 1 {
                        return Err(ContainerError::MalformedHeader(format!(
                            "json entry {:?} must have rank-1 shape",
                            entry.name
                        )));
                    }
                    entry.shape[0] as u64
                }
                other => return Err(ContainerError::UnsupportedDtype(other.to_string())),
            };
            let end = entry.byte_offset.checked_add(byte_len).ok_or_else(|| {
                ContainerError::TruncatedPayload(format!("{:?} range overflows", entry.name))
            })?;
            if end > payload.len() as u64 {
                return Err(ContainerError::TruncatedPayload(format!(
                    "{:?} claims bytes {}..{} but payload holds {}",
                    entry.name,
                    entry.byte_offset,
                    end,
                    payload.len()
                )));
            }
            for (s, e, other) in &ranges {
                if entry.byte_offset < *e && *s < end {
                    return Err(ContainerError::OverlappingPayload(format!(
                        "{} and {}",
                        other, entry.name
                    )));
                }
            }
            ranges.push((entry.byte_offset, end, entry.name.clone()));

            let raw = &payload[entry.byte_offset as usize..end as usize];
            let parsed = match entry.dtype.as_str() {
                "f32" => {
                    let data: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Payload::F32(Tensor::new(entry.shape, data).map_err(|e| {
                        ContainerError::MalformedHeader(format!("{:?}: {e}", entry.name))
                    })?)
                }
                _ => Payload::Json(raw.to_vec()),
            };
            entries.push((entry.name, parsed));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
