//! IDX image and label files: big-endian `u32` header words, one byte per
//! pixel or label.

use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn words(bytes: &[u8], count: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * count {
        return Err(Error::format(format!(
            "IDX header needs {} bytes, file has {}",
            4 * count,
            bytes.len()
        )));
    }
    Ok(bytes[..4 * count]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

fn check_magic(found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::format(format!(
            "IDX magic is {found:#010x}, expected {expected:#010x}"
        )));
    }
    Ok(())
}

/// Images flattened row-major with pixels scaled by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vector>> {
    let h = words(bytes, 4)?;
    check_magic(h[0], IDX_IMAGES_MAGIC)?;
    let (count, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let size = rows * cols;
    let payload = &bytes[16..];
    if count.checked_mul(size) != Some(payload.len()) {
        return Err(Error::format(format!(
            "IDX declares {count} images of {rows}x{cols} but carries {} pixel bytes",
            payload.len()
        )));
    }
    if size == 0 {
        return Ok(vec![Vector::zeros(0); count]);
    }
    Ok(payload
        .chunks_exact(size)
        .map(|img| Vector::from(img.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>()))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = words(bytes, 2)?;
    check_magic(h[0], IDX_LABELS_MAGIC)?;
    let payload = &bytes[8..];
    if payload.len() != h[1] as usize {
        return Err(Error::format(format!(
            "IDX declares {} labels but carries {}",
            h[1],
            payload.len()
        )));
    }
    Ok(payload.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<Vector>> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path)?)
}

/// Encodes raw pixel images, each `rows · cols` bytes, as an IDX file.
pub fn encode_idx_images(images: &[Vec<u8>], rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.iter().any(|im| im.len() != rows * cols) {
        return Err(Error::shape(format!("every image must hold {rows}x{cols} pixels")));
    }
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for w in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    for im in images {
        out.extend_from_slice(im);
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
