//! Parser for the IDX container used by the MNIST distribution.
//!
//! Layout: two zero bytes, a type byte (`0x08` = unsigned byte), the number
//! of dimensions, one big-endian `u32` per dimension, then the raw values.
//! Labels use magic `0x00000801`, images `0x00000803`.

use alloc::format;
use alloc::vec::Vec;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header at byte {at}")))
}

pub fn parse(bytes: &[u8]) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABELS_MAGIC && magic != IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX magic 0x{magic:08x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated IDX payload: header declares {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "IDX payload has {} trailing bytes",
            payload.len() - expected
        )));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

/// Pairs an image array `(n, rows, cols)` with a label array `(n)`.
/// Pixels are scaled to `[0, 1]`; images become `(n, 1, rows, cols)`.
pub fn labeled_images(images: &IdxArray, labels: &IdxArray) -> Result<LabeledSet> {
    if images.dims.len() != 3 || labels.dims.len() != 1 {
        return Err(Error::Format("expected a 3-d image array and a 1-d label array".into()));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Format(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let pixels = images.data.iter().map(|b| *b as f64 / 255.0).collect();
    let images = Tensor::new(
        alloc::vec![n, 1, images.dims[1], images.dims[2]],
        pixels,
    )?;
    LabeledSet::new(images, labels.data.iter().map(|b| *b as usize).collect())
}

/// Encodes an IDX unsigned-byte array; the inverse of [`parse`].
pub fn encode(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&[0, 0, 0x08, dims.len() as u8]);
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
