//! IDX files (MNIST / FashionMNIST distribution format).
//!
//! Big-endian. Images: magic `0x00000803`, count, rows, cols, then one byte
//! per pixel. Labels: magic `0x00000801`, count, then one byte per label.
//! Paths ending in `.gz` are decompressed transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{LabeledDataset, Normalization};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = read_bytes(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("file ends inside the header (offset {at})"),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let observed = be_u32(bytes, 0, path)?;
    if observed != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "bad magic number: expected {expected:#010x}, observed bytes {:02x} {:02x} {:02x} {:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        });
    }
    Ok(())
}

/// Parses an image file into `(count, rows, cols, pixels)`.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "header declares {n} images of {rows}x{cols} but payload has {} bytes",
                body.len()
            ),
        });
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("header declares {n} labels but payload has {} bytes", body.len()),
        });
    }
    Ok(body.to_vec())
}

/// Loads an image/label pair. Pixels are scaled to `[0, 1]` by `/255` and
/// flattened row-major; the class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (n, rows, cols, pixels) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            reason: format!("{} labels for {n} images in {}", labels.len(), images_path.display()),
        });
    }
    let features = Tensor::matrix(
        n,
        rows * cols,
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let k = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, labels, k, Normalization::UnitInterval)?.with_image_shape(rows, cols)
}

/// Writes 8-bit images in IDX format (used for fixtures and exports).
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let n = pixels.len() / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    atomic_write(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    atomic_write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx_images(&img, 2, 2, &[0, 255, 128, 1, 255, 255, 0, 0]).unwrap();
        write_idx_labels(&lab, &[3, 7]).unwrap();
        let d = load_idx(&img, &lab).unwrap();
        assert_eq!((d.len(), d.dim(), d.num_classes()), (2, 4, 8));
        assert_eq!(d.row(0)[1], 1.0);
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.image_shape(), Some((2, 2)));
    }

    #[test]
    fn wrong_magic_is_rejected_with_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        write_idx_images(&img, 1, 1, &[9]).unwrap();
        let err = load_idx_labels(&img).unwrap_err().to_string();
        assert!(err.contains("00 00 08 03"), "{err}");
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img.idx");
        let lab = dir.path().join("lab.idx");
        write_idx_images(&img, 1, 1, &[1, 2, 3]).unwrap();
        write_idx_labels(&lab, &[0, 1]).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format { .. })));
    }

    #[test]
    fn gz_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut raw = Vec::new();
        raw.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        raw.extend_from_slice(&2u32.to_be_bytes());
        raw.extend_from_slice(&[4, 5]);
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&raw).unwrap();
        let p = dir.path().join("l.idx.gz");
        std::fs::write(&p, enc.finish().unwrap()).unwrap();
        assert_eq!(load_idx_labels(&p).unwrap(), vec![4, 5]);
    }
}
