//! Every method on the bundled two-Gaussian config, one bench per method,
//! followed by a combined mean ± std table.
//!
//! cargo run --release --example synthetic_bench [OUT_DIR]

use std::path::{Path, PathBuf};

use imbforge::experiment::{bundled_config, cmd_bench, run_label, Method};
use imbforge::metrics::{format_table, TableRow};
use imbforge::Result;

pub fn run(out: &Path, seeds: &[u64]) -> Result<Vec<TableRow>> {
    let mut rows = Vec::new();
    for method in Method::ALL {
        let mut cfg = bundled_config("synthetic")?;
        cfg.method = method;
        cfg.seeds = seeds.to_vec();
        cfg.output_dir = out.join(run_label(&cfg));
        let outcome = cmd_bench(&cfg)?;
        rows.push(TableRow {
            label: outcome.label,
            summary: outcome.summary,
        });
    }
    Ok(rows)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/synthetic".into());
    let rows = run(&out, &[0, 1, 2])?;
    print!("{}", format_table("two Gaussians, rho = 50", "method", &rows));
    Ok(())
}
