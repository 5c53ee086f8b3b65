//! The staged pipeline: pretrain once and save the model with its Fisher
//! diagonal, then oversample from that checkpoint. The saved model reloads
//! bit for bit.
//!
//! cargo run --release --example checkpoint_pipeline [OUT_DIR]

use std::path::{Path, PathBuf};

use imbforge::experiment::{bundled_config, cmd_oversample, cmd_pretrain, OversampleArtifacts};
use imbforge::mgvae::MgvaeModel;
use imbforge::Result;

pub fn run(out: &Path) -> Result<OversampleArtifacts> {
    let mut cfg = bundled_config("synthetic")?;
    cfg.seeds = vec![0];
    cfg.output_dir = out.join("pretrain");
    let pre = cmd_pretrain(&cfg)?;
    println!("pretrained model {}", pre.model.display());

    let model = MgvaeModel::load(&pre.model)?;
    let again = out.join("reloaded.ckpt");
    model.save(&again)?;
    let same = MgvaeModel::load(&again)?.store().flat_values() == model.store().flat_values();
    println!("reload is bit-exact: {same}");

    cfg.checkpoint = Some(pre.dir.clone());
    cfg.output_dir = out.join("oversample");
    cmd_oversample(&cfg)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/examples/pipeline".into());
    let art = run(&out)?;
    println!("balanced class counts {:?}", art.class_counts);
    for p in &art.dataset {
        println!("wrote {}", p.display());
    }
    Ok(())
}
