//! Reader for the IDX container used by MNIST-style image sets.

use std::path::Path;

use crate::error::{Error, Result};
use crate::learning::data::Dataset;

const UBYTE: u8 = 0x08;

/// An unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parse an in-memory IDX file. Only the unsigned-byte element type is
/// accepted.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Idx("file shorter than the magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!(
            "bad magic {:02x}{:02x}",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Idx(format!(
            "unsupported element type 0x{:02x}",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Idx("zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Idx("truncated header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx("dimension product overflows".into()))?;
    let body = &bytes[header..];
    if body.len() != count {
        return Err(Error::Idx(format!(
            "expected {count} data bytes, found {}",
            body.len()
        )));
    }
    Ok(IdxArray {
        dims,
        data: body.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    parse_idx(&std::fs::read(path)?)
}

/// Pair an image tensor (magic 0x803) with a label vector (magic 0x801).
/// Pixels are scaled to `[0, 1]`.
pub fn dataset_from_idx(
    images: &IdxArray,
    labels: &IdxArray,
    num_classes: usize,
) -> Result<Dataset> {
    if images.dims.len() != 3 {
        return Err(Error::Idx(format!(
            "images need 3 dimensions, found {}",
            images.dims.len()
        )));
    }
    if labels.dims.len() != 1 {
        return Err(Error::Idx(format!(
            "labels need 1 dimension, found {}",
            labels.dims.len()
        )));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Idx(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let dim = images.dims[1] * images.dims[2];
    let features = images.data.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels = labels.data.iter().map(|&y| y as usize).collect();
    Dataset::new(features, labels, dim, num_classes)
}

pub fn load_idx_dataset(images: &Path, labels: &Path, num_classes: usize) -> Result<Dataset> {
    dataset_from_idx(&read_idx(images)?, &read_idx(labels)?, num_classes)
}

/// Serialize an unsigned-byte tensor in IDX form.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
