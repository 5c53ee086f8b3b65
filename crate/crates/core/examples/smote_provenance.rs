//! SMOTE with a provenance record per synthetic row. Each record names the
//! source row, its neighbor and the interpolation weight, so every
//! synthetic point can be rebuilt from the original data.
//!
//! cargo run --release --example smote_provenance [OUT_DIR]

use std::path::{Path, PathBuf};

use imbforge::baselines::{nearest_neighbors, smote_oversample, write_smote_provenance};
use imbforge::data::synth_gaussians;
use imbforge::rng::seeded;
use imbforge::Result;

/// Largest reconstruction residual over all synthetic rows.
pub fn run(out: &Path) -> Result<f64> {
    let data = synth_gaussians(200, 15, 2.0, &mut seeded(3))?;
    let k = 5;
    let (balanced, records) = smote_oversample(&data, k, &mut seeded(4))?;
    println!("{:?} -> {:?}", data.class_counts(), balanced.class_counts());

    let mut worst = 0.0f64;
    for r in &records {
        let (x, nb) = (balanced.row(r.source_index), balanced.row(r.neighbor_index));
        let label = balanced.labels()[r.source_index];
        let members = data.indices_of(label);
        assert!(nearest_neighbors(&data, &members, r.source_index, k).contains(&r.neighbor_index));
        for ((s, a), b) in balanced.row(r.synthetic_index).iter().zip(x).zip(nb) {
            worst = worst.max((s - (a + r.u * (b - a))).abs());
        }
    }
    write_smote_provenance(&out.join("smote_provenance.csv"), &records)?;
    Ok(worst)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/smote".into());
    let worst = run(&out)?;
    println!("max reconstruction residual {worst:.3e}");
    println!("provenance written to {}", out.join("smote_provenance.csv").display());
    Ok(())
}
