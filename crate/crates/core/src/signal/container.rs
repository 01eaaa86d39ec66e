//! Binary mel container: 12-byte magic, u32 version, u64 mels, u64 frames
//! (all little-endian), then row-major `f32` values.

use std::fs;
use std::path::Path;

use super::MelSpectrogram;
use crate::error::{Error, Result};

pub const MEL_MAGIC: &[u8; 12] = b"WAVEGLOW-MEL";
pub const MEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 16 + 16;

pub fn write_mel(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * mel.values().len());
    bytes.extend_from_slice(MEL_MAGIC);
    bytes.extend_from_slice(&MEL_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(mel.n_mels() as u64).to_le_bytes());
    bytes.extend_from_slice(&(mel.frames() as u64).to_le_bytes());
    for v in mel.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::from(e).at_path(path))
}

pub fn read_mel(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::from(e).at_path(path))?;
    decode(&bytes).map_err(|e| e.at_path(path))
}

fn decode(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < HEADER_LEN || &bytes[..12] != MEL_MAGIC {
        return Err(Error::Format("not a mel container (bad magic)".into()));
    }
    let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if version != MEL_VERSION {
        return Err(Error::Format(format!("mel container version={version}, expected {MEL_VERSION}")));
    }
    let (n_mels, frames) = (u64_at(16) as usize, u64_at(24) as usize);
    let expected = n_mels
        .checked_mul(frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("mel dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "mel body has {} bytes, dims {n_mels}x{frames} need {expected}",
            body.len()
        )));
    }
    let values = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    MelSpectrogram::new(values, n_mels, frames)
}
