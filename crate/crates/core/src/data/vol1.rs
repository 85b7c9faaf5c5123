//! The VOL1 volume file: magic `VOL1`, then H, W, D, C as little-endian
//! u32, then H·W·D·C little-endian f32 values in `(y, x, z, c)` order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Shape, Volume};

pub const MAGIC: &[u8; 4] = b"VOL1";
const HEADER: usize = 4 + 4 * 4;

pub fn write_volume(v: &Volume<f32>, out: &mut impl Write) -> std::io::Result<()> {
    let s = v.shape();
    out.write_all(MAGIC)?;
    for d in [s.h, s.w, s.d, s.c] {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)
}

/// Parses a VOL1 image held in memory; `path` only labels errors.
pub fn read_volume(bytes: &[u8], path: &Path) -> Result<Volume<f32>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < HEADER {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
    if shape.spatial().contains(&0) || shape.c == 0 {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("zero dimension in {shape}"),
        });
    }
    let expected = shape
        .h
        .checked_mul(shape.w)
        .and_then(|n| n.checked_mul(shape.d))
        .and_then(|n| n.checked_mul(shape.c))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER))
        .ok_or_else(|| Error::Malformed {
            path: path.into(),
            reason: format!("dimensions {shape} overflow"),
        })?;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.into(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            path: path.into(),
            reason: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let data: Vec<f32> = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(shape, data)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_volume(&bytes, path)
}

/// Writes through a temporary sibling and renames it into place.
pub fn save_volume(v: &Volume<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_volume(v, &mut buf).map_err(|e| Error::io(path, e))?;
    crate::checkpoint::write_atomic(path, &buf)
}
