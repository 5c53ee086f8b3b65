//! IDX image files: write a tiny set, load it back, downsample to half
//! resolution and dump a reference/sample grid as PGM.
//!
//! cargo run --example idx_images [OUT_DIR]

use std::path::{Path, PathBuf};

use imbforge::data::{load_idx, resize_dataset, sample_grid_pgm, write_idx_images, write_idx_labels, LabeledDataset};
use imbforge::Result;

/// Writes `n` 8×8 images (a bar whose position encodes the label) and
/// returns the loaded set together with its 4×4 version.
pub fn run(out: &Path, n: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let (h, w) = (8, 8);
    let mut pixels = vec![0u8; n * h * w];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 4) as u8;
        for r in 0..h {
            for c in (2 * label as usize)..(2 * label as usize + 2) {
                pixels[i * h * w + r * w + c] = 255;
            }
        }
        labels.push(label);
    }
    let images = out.join("toy-images-idx3-ubyte");
    let label_file = out.join("toy-labels-idx1-ubyte");
    write_idx_images(&images, h, w, &pixels)?;
    write_idx_labels(&label_file, &labels)?;

    let data = load_idx(&images, &label_file)?;
    let small = resize_dataset(&data, 4, 4)?;
    // One reference per row followed by two "generated" columns.
    let refs = data.features().select_rows(&[0, 1]);
    let generated = data.features().select_rows(&[4, 8, 5, 9]);
    let size = sample_grid_pgm(&out.join("grid.pgm"), (h, w), &refs, &generated, 2)?;
    println!("grid of {size:?} tiles written to {}", out.join("grid.pgm").display());
    Ok((data, small))
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/idx".into());
    let (data, small) = run(&out, 12)?;
    println!("loaded {} images of shape {:?}, counts {:?}", data.len(), data.image_shape(), data.class_counts());
    println!("downsampled shape {:?}", small.image_shape());
    Ok(())
}
