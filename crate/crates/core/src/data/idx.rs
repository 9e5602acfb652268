//! IDX container reading and writing.
//!
//! Only the unsigned-byte element type is supported: magic `0x00000803` for
//! `n × rows × cols` image files and `0x00000801` for `n` label files. All
//! sizes are big-endian `u32`.

use std::fs;
use std::path::Path;

use super::{DataError, LabeledDataset};
use crate::numeric::DenseMatrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self) -> Result<u32, DataError> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| DataError::Truncated {
            path: self.path.to_path_buf(),
        })?;
        self.pos = end;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(len).ok_or_else(|| DataError::Truncated {
            path: self.path.to_path_buf(),
        })?;
        let out = self.bytes.get(self.pos..end).ok_or_else(|| DataError::Truncated {
            path: self.path.to_path_buf(),
        })?;
        self.pos = end;
        Ok(out)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses an image file into `(rows, cols, pixels)` with pixels in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>), DataError> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let raw = cur.take(n * rows * cols)?;
    let pixels = raw.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, DataError> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let magic = cur.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = cur.u32_be()? as usize;
    Ok(cur.take(n)?.iter().map(|&b| usize::from(b)).collect())
}

/// Loads an image/label file pair. The class catalogue is `0..=max label`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<LabeledDataset, DataError> {
    let (n, rows, cols, pixels) = parse_idx_images(&read(images)?, images)?;
    let label_values = parse_idx_labels(&read(labels)?, labels)?;
    if label_values.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: label_values.len(),
        });
    }
    let num_classes = label_values.iter().max().map_or(0, |m| m + 1);
    let inputs = DenseMatrix::from_vec(n, rows * cols, pixels)?;
    LabeledDataset::new(inputs, Some((rows, cols)), label_values, num_classes)
}

/// Encodes `[0, 1]` pixels as an IDX image file (values rounded to bytes).
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[f64]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel count does not match dims");
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for dim in [n, rows, cols] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend(pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| u8::try_from(l).expect("IDX labels are single bytes")));
    out
}

/// Writes an image dataset as an IDX pair.
pub fn write_idx(dataset: &LabeledDataset, images: &Path, labels: &Path) -> Result<(), DataError> {
    let (rows, cols) = dataset.image_shape().ok_or(DataError::NotImages)?;
    let bytes = encode_idx_images(dataset.len(), rows, cols, dataset.inputs().as_slice());
    fs::write(images, bytes).map_err(|source| DataError::Io {
        path: images.to_path_buf(),
        source,
    })?;
    fs::write(labels, encode_idx_labels(dataset.labels())).map_err(|source| DataError::Io {
        path: labels.to_path_buf(),
        source,
    })
}
