//! IDX archives (the MNIST container format).
//!
//! Layout: two zero bytes, a type byte (`0x08` = unsigned byte), a rank
//! byte, then `rank` big-endian `u32` dimensions and the payload. Images
//! use rank 3 (`[N, H, W]`) or rank 4 (`[N, C, H, W]`); labels rank 1.

use std::path::Path;

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const UBYTE: u8 = 0x08;

/// Raw contents of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(path, format!("truncated: {} bytes, header needs 4", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || bytes[3] == 0 {
        let magic = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes"));
        return Err(Error::format(path, format!("bad magic 0x{magic:08x}")));
    }
    let rank = bytes[3] as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::format(path, format!("truncated: {} bytes, header needs {header}", bytes.len())));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let have = bytes.len() - header;
    if have < count {
        return Err(Error::format(path, format!("truncated: payload has {have} bytes, dims {dims:?} need {count}")));
    }
    if have > count {
        return Err(Error::format(path, format!("{} trailing bytes after payload", have - count)));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

pub fn write_idx(path: &Path, dims: &[usize], data: &[u8]) -> Result<()> {
    if dims.iter().product::<usize>() != data.len() {
        return Err(Error::invalid("write_idx", format!("dims {dims:?} do not match {} bytes", data.len())));
    }
    std::fs::write(path, encode_idx(dims, data)).map_err(|e| Error::io(path, e))
}

/// Load an image/label archive pair; pixels are scaled to `[0, 1]`. The
/// class count is `num_classes` if given, else one past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path, num_classes: Option<usize>) -> Result<ImageDataset> {
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    let shape = match images.dims[..] {
        [n, h, w] => [n, 1, h, w],
        [n, c, h, w] => [n, c, h, w],
        _ => {
            return Err(Error::format(
                images_path,
                format!("image archive must have rank 3 or 4, got {:?}", images.dims),
            ))
        }
    };
    if labels.dims.len() != 1 {
        return Err(Error::format(labels_path, format!("label archive must have rank 1, got {:?}", labels.dims)));
    }
    if shape[0] != labels.dims[0] {
        return Err(Error::format(
            labels_path,
            format!("{} images but {} labels", shape[0], labels.dims[0]),
        ));
    }
    let labels: Vec<usize> = labels.data.iter().map(|&l| l as usize).collect();
    let classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let pixels = images.data.iter().map(|&p| p as f32 / 255.0).collect();
    ImageDataset::new(Tensor::new(&shape, pixels)?, labels, classes)
}
