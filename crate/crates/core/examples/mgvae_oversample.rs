//! Balancing a two-moons set with MGVAE: pretrain on the majority, estimate
//! the Fisher diagonal, fine-tune on the minority under EWC and generate
//! until both classes are the same size.
//!
//! cargo run --release --example mgvae_oversample

use imbforge::data::two_moons;
use imbforge::ewc::{build_balanced_dataset, BalancedOutput, TrainConfig};
use imbforge::mgvae::MgvaeConfig;
use imbforge::rng::seeded;
use imbforge::Result;

pub fn run(seed: u64) -> Result<BalancedOutput> {
    let train = two_moons(400, 20, 0.08, &mut seeded(seed))?;
    let mut model = MgvaeConfig::tabular(train.dim(), false);
    model.hidden = vec![32, 32];
    model.latent_dim = 2;
    let mut cfg = TrainConfig {
        pretrain_epochs: 15,
        finetune_epochs: 60,
        prior_subsample: 32,
        fisher_sample_count: 64,
        lambda: 5e2,
        ..TrainConfig::default()
    };
    cfg.optim.lr_decay = 1.0;
    build_balanced_dataset(&train, &model, &cfg, seed)
}

fn main() -> Result<()> {
    let out = run(0)?;
    println!("head class {}", out.head_class);
    println!("balanced counts {:?}", out.dataset.class_counts());
    println!("pretrain loss {:.4} -> {:.4}", out.pretrain_log.first_loss().unwrap(), out.pretrain_log.last_loss().unwrap());
    for b in &out.blocks {
        println!(
            "class {}: {} synthetic rows, fine-tune loss {:.4} -> {:.4}",
            b.class,
            b.samples.rows(),
            b.log.first_loss().unwrap(),
            b.log.last_loss().unwrap()
        );
        for (i, &r) in b.reference_indices.iter().take(3).enumerate() {
            println!("  sample {:?} guided by majority row {r}", b.samples.row(i));
        }
    }
    Ok(())
}
