//! Sensitivity to the EWC weight: one bench per candidate lambda on the
//! bundled synthetic config, collected into `sweep.txt`.
//!
//! cargo run --release --example lambda_sweep [OUT_DIR]

use std::path::{Path, PathBuf};

use imbforge::experiment::{bundled_config, cmd_lambda_sweep};
use imbforge::metrics::{format_table, TableRow};
use imbforge::Result;

pub fn run(out: &Path, seeds: &[u64], candidates: &[f64]) -> Result<Vec<TableRow>> {
    let mut cfg = bundled_config("synthetic")?;
    cfg.seeds = seeds.to_vec();
    cfg.train.lambda_candidates = candidates.to_vec();
    cfg.output_dir = out.to_path_buf();
    cmd_lambda_sweep(&cfg)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/lambda".into());
    let rows = run(&out, &[0, 1, 2], &[5e2, 5e4, 5e6, 5e8])?;
    print!("{}", format_table("lambda sweep", "lambda", &rows));
    Ok(())
}
