//! Raw little-endian `f32` tensor files with a JSON shape sidecar.
//!
//! `name.f32` holds the elements in storage order; `name.json` holds
//! `{"shape":[n,c,h,w]}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Shape4, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: Shape4,
}

pub fn tensor_to_le_bytes(t: &Tensor4<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn tensor_from_le_bytes(shape: Shape4, bytes: &[u8]) -> Result<Tensor4<f32>> {
    if bytes.len() != shape.len() * 4 {
        return Err(Error::DataLength {
            len: bytes.len() / 4,
            shape,
            expected: shape.len(),
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor4::new(shape, data)
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f32"), stem.with_extension("json"))
}

/// Writes `stem.f32` and `stem.json`.
pub fn write_tensor(stem: impl AsRef<Path>, t: &Tensor4<f32>) -> Result<()> {
    let (raw, meta) = paths(stem.as_ref());
    fs::write(raw, tensor_to_le_bytes(t))?;
    fs::write(meta, serde_json::to_string(&Sidecar { shape: t.shape() })?)?;
    Ok(())
}

/// Reads a tensor written by [`write_tensor`]. `stem` may carry either
/// extension or none.
pub fn read_tensor(stem: impl AsRef<Path>) -> Result<Tensor4<f32>> {
    let (raw, meta) = paths(stem.as_ref());
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(meta)?)?;
    tensor_from_le_bytes(sidecar.shape, &fs::read(raw)?)
}
