//! The MGF1 tensor container.
//!
//! ```text
//! "MGF1"                      4 bytes
//! name_length                 u32 LE
//! name                        UTF-8, name_length bytes
//! rows, cols                  u32 LE each
//! rate_numerator, rate_denominator   u32 LE each
//! values                      rows·cols f32 LE, row-major
//! ```
//!
//! Feature tracks store their modality as the name and their sampling rate.
//! Checkpoints reuse the container for parameter tensors, with the tensor
//! name in place of the modality.

use std::fs;
use std::path::Path;

use mgnma_core::features::{FeatureTrack, Modality, Rate};
use mgnma_core::Matrix;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MGF1";
const HEADER_FIXED: u64 = 4 + 4 + 16;

/// An undecoded-name MGF1 payload.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub rate: (u32, u32),
    pub values: Matrix<f32>,
}

impl RawTensor {
    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED as usize + self.name.len() + 4 * self.values.data().len()
    }
}

pub fn encode(tensor: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(tensor.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(tensor.name.len() as u32).to_le_bytes());
    out.extend_from_slice(tensor.name.as_bytes());
    for v in [
        tensor.values.rows() as u32,
        tensor.values.cols() as u32,
        tensor.rate.0,
        tensor.rate.1,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in tensor.values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated {
            what,
            expected: (self.pos as u64).saturating_add(n as u64),
            found: self.bytes.len() as u64,
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes a container and rejects non-finite values. No semantic checks.
pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: [magic[0], magic[1], magic[2], magic[3]],
        });
    }
    let name_len = cur.u32("header")? as usize;
    let name = std::str::from_utf8(cur.take(name_len, "name")?)
        .map_err(|_| Error::InvalidName)?
        .to_owned();
    let rows = cur.u32("header")? as usize;
    let cols = cur.u32("header")? as usize;
    let rate = (cur.u32("header")?, cur.u32("header")?);

    let count = (rows as u64) * (cols as u64);
    let payload = count * 4;
    let remaining = (bytes.len() - cur.pos) as u64;
    if remaining < payload {
        return Err(Error::Truncated {
            what: "payload",
            expected: cur.pos as u64 + payload,
            found: bytes.len() as u64,
        });
    }
    if remaining > payload {
        return Err(Error::TrailingBytes {
            extra: remaining - payload,
        });
    }
    let data: Vec<f32> = bytes[cur.pos..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i / cols.max(1),
            col: i % cols.max(1),
        });
    }
    Ok(RawTensor {
        name,
        rate,
        values: Matrix::new(rows, cols, data)?,
    })
}

fn check_values(modality: &Modality, values: &Matrix<f32>) -> Result<()> {
    for r in 0..values.rows() {
        for (c, &v) in values.row(r).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
            if modality.is_probability() && !(0.0..=1.0).contains(&v) {
                return Err(Error::LabelOutOfRange { row: r, col: c, value: v });
            }
        }
    }
    Ok(())
}

pub fn track_to_raw(track: &FeatureTrack) -> RawTensor {
    RawTensor {
        name: track.modality().as_str().to_owned(),
        rate: (track.rate().num, track.rate().den),
        values: track.values().clone(),
    }
}

/// Validates a decoded container as a feature track.
pub fn raw_to_track(raw: RawTensor) -> Result<FeatureTrack> {
    let modality: Modality = raw.name.parse()?;
    check_values(&modality, &raw.values)?;
    let rate = Rate::new(raw.rate.0, raw.rate.1)?;
    Ok(FeatureTrack::new(modality, rate, raw.values)?)
}

pub fn encode_track(track: &FeatureTrack) -> Result<Vec<u8>> {
    check_values(track.modality(), track.values())?;
    track.validate()?;
    Ok(encode(&track_to_raw(track)))
}

pub fn decode_track(bytes: &[u8]) -> Result<FeatureTrack> {
    raw_to_track(decode(bytes)?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Validates, then writes. Nothing is written for an invalid track.
pub fn write_track(track: &FeatureTrack, path: &Path) -> Result<()> {
    let bytes = encode_track(track)?;
    write_bytes(path, &bytes)
}

pub fn read_track(path: &Path) -> Result<FeatureTrack> {
    decode_track(&read_bytes(path)?)
}

pub fn write_raw(tensor: &RawTensor, path: &Path) -> Result<()> {
    write_bytes(path, &encode(tensor))
}

pub fn read_raw(path: &Path) -> Result<RawTensor> {
    decode(&read_bytes(path)?)
}
