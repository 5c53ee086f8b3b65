//! Grayscale image helpers: bilinear downsampling and PGM (P5) dumps.

use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centers and edge clamping. An exact
/// 2x reduction averages each 2x2 block.
pub fn resize_bilinear(img: &[f64], from: (usize, usize), to: (usize, usize)) -> Result<Vec<f64>> {
    let (h, w) = from;
    let (nh, nw) = to;
    if img.len() != h * w || h == 0 || w == 0 || nh == 0 || nw == 0 {
        return Err(Error::Shape(format!(
            "cannot resize {} pixels as {h}x{w} to {nh}x{nw}",
            img.len()
        )));
    }
    let axis = |dst: usize, n_src: usize, n_dst: usize| {
        let s = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(nh * nw);
    for i in 0..nh {
        let (r0, r1, fr) = axis(i, h, nh);
        for j in 0..nw {
            let (c0, c1, fc) = axis(j, w, nw);
            let top = img[r0 * w + c0] * (1.0 - fc) + img[r0 * w + c1] * fc;
            let bot = img[r1 * w + c0] * (1.0 - fc) + img[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bot * fr);
        }
    }
    Ok(out)
}

/// Resizes every row of an image dataset.
pub fn resize_dataset(data: &LabeledDataset, rows: usize, cols: usize) -> Result<LabeledDataset> {
    let from = data
        .image_shape()
        .ok_or_else(|| Error::Config("dataset has no image shape to resize".into()))?;
    let mut pixels = Vec::with_capacity(data.len() * rows * cols);
    for i in 0..data.len() {
        pixels.extend(resize_bilinear(data.row(i), from, (rows, cols))?);
    }
    let out = LabeledDataset::new(
        Tensor::matrix(data.len(), rows * cols, pixels)?,
        data.labels().to_vec(),
        data.num_classes(),
        data.normalization(),
    )?
    .with_image_shape(rows, cols)?;
    match data.class_names() {
        Some(names) => out.with_class_names(names.to_vec()),
        None => Ok(out),
    }
}

/// Writes an 8-bit binary PGM. Values are clamped to `[0, 1]` and scaled
/// by 255 with rounding.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != rows * cols {
        return Err(Error::Shape(format!("{} pixels for a {rows}x{cols} image", pixels.len())));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    atomic_write(path, &out)
}

/// Tiles a grid where row `i` holds `references` row `i` followed by
/// `per_row` generated images `generated[i*per_row .. (i+1)*per_row]`.
/// Returns the grid size in tiles `(rows, cols)`.
pub fn sample_grid_pgm(
    path: &Path,
    image_shape: (usize, usize),
    references: &Tensor,
    generated: &Tensor,
    per_row: usize,
) -> Result<(usize, usize)> {
    let (h, w) = image_shape;
    let m = references.rows();
    if references.cols() != h * w || generated.cols() != h * w || generated.rows() != m * per_row {
        return Err(Error::Shape(format!(
            "grid needs {m}x{h}x{w} references and {}x{h}x{w} samples, got {:?} and {:?}",
            m * per_row,
            references.shape(),
            generated.shape()
        )));
    }
    let tiles_w = per_row + 1;
    let (gh, gw) = (m * h, tiles_w * w);
    let mut canvas = vec![0.0; gh * gw];
    for i in 0..m {
        for t in 0..tiles_w {
            let src = if t == 0 {
                references.row(i)
            } else {
                generated.row(i * per_row + t - 1)
            };
            for r in 0..h {
                let dst = (i * h + r) * gw + t * w;
                canvas[dst..dst + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
        }
    }
    write_pgm(path, gh, gw, &canvas)?;
    Ok((m, tiles_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_averages_blocks() {
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let out = resize_bilinear(&img, (4, 4), (2, 2)).unwrap();
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn same_size_is_identity() {
        let img: Vec<f64> = (0..6).map(|v| f64::from(v) / 5.0).collect();
        assert_eq!(resize_bilinear(&img, (2, 3), (2, 3)).unwrap(), img);
    }

    #[test]
    fn pgm_header_and_grid_size() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let refs = Tensor::full(&[2, 4], 1.0);
        let gen = Tensor::zeros(&[6, 4]);
        assert_eq!(sample_grid_pgm(&p, (2, 2), &refs, &gen, 3).unwrap(), (2, 4));
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n8 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 32);
        assert_eq!(bytes[header.len()], 255);
        assert_eq!(bytes[header.len() + 2], 0);
    }
}
