//! IDX container files (big-endian header), as used by MNIST.

use std::path::Path;

use super::{Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::tensor::TensorShape;

/// Unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const UBYTE: u8 = 0x08;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Parse { offset: bytes.len() as u64, message: format!("truncated header, need bytes {at}..{}", at + 4) })
}

/// Parses an unsigned-byte IDX array with exactly `rank` dimensions.
pub fn parse_idx(bytes: &[u8], rank: u8) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    let expected = u32::from(UBYTE) << 8 | u32::from(rank);
    if magic != expected {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        });
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for d in 0..rank as usize {
        dims.push(be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * rank as usize;
    let body: usize = dims.iter().product();
    let have = bytes.len() - header;
    if have != body {
        return Err(Error::Parse {
            offset: (header + have.min(body)) as u64,
            message: format!("header declares {body} data bytes, file holds {have}"),
        });
    }
    Ok(IdxArray { dims, data: bytes[header..].to_vec() })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn located(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { offset, message } => Error::Parse { offset, message: format!("{}: {message}", path.display()) },
        e => e,
    }
}

/// Reads an image file (`[N, H, W]`) and its label file (`[N]`). Pixels are
/// scaled by 1/255 into `[N, 1, H, W]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledSet> {
    let img = parse_idx(&read(images)?, 3).map_err(|e| located(images, e))?;
    let lab = parse_idx(&read(labels)?, 1).map_err(|e| located(labels, e))?;
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{} images but {} labels", img.dims[0], lab.dims[0]),
        });
    }
    let (h, w) = (img.dims[1].max(1), img.dims[2].max(1));
    let sample = TensorShape::new(vec![1, h, w])?;
    let values = img.data.iter().map(|&b| f32::from(b) / 255.0).collect();
    LabeledSet::new(sample, values, lab.data.iter().map(|&l| l as usize).collect())
}

/// The four standard MNIST files in `dir`, ten classes.
pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
    Dataset::new(train, test, 10)
}
