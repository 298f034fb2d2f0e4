//! CIFAR-100 binary records: coarse label, fine label, 3072 pixel bytes
//! (red plane, green plane, blue plane, each 32x32 row-major).

use std::path::Path;

use super::{Dataset, LabeledSet};
use crate::error::{Error, Result};
use crate::tensor::TensorShape;

pub const CIFAR_RECORD: usize = 2 + 3 * 32 * 32;

/// Fine labels and `[N, 3, 32, 32]` images scaled by 1/255.
pub fn load_cifar_binary(path: &Path) -> Result<LabeledSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse { offset, message: format!("{}: {message}", path.display()) },
        e => e,
    })
}

pub(crate) fn parse_cifar(bytes: &[u8]) -> Result<LabeledSet> {
    let tail = bytes.len() % CIFAR_RECORD;
    if tail != 0 {
        return Err(Error::Parse {
            offset: (bytes.len() - tail) as u64,
            message: format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * (CIFAR_RECORD - 2));
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let fine = rec[1] as usize;
        if fine >= 100 {
            return Err(Error::Parse { offset: (r * CIFAR_RECORD + 1) as u64, message: format!("fine label {fine} >= 100") });
        }
        labels.push(fine);
        values.extend(rec[2..].iter().map(|&b| f32::from(b) / 255.0));
    }
    LabeledSet::new(TensorShape::new(vec![3, 32, 32])?, values, labels)
}

/// `train.bin` and `test.bin` from the CIFAR-100 binary distribution.
pub fn load_cifar100_dir(dir: &Path) -> Result<Dataset> {
    Dataset::new(load_cifar_binary(&dir.join("train.bin"))?, load_cifar_binary(&dir.join("test.bin"))?, 100)
}
