//! How the EWC weight holds a fine-tuned model near its pretrained
//! parameters. The same fine-tune runs under several values of lambda and
//! the Fisher-weighted displacement from the anchor is reported.
//!
//! cargo run --release --example ewc_penalty

use imbforge::data::synth_gaussians;
use imbforge::ewc::{finetune_ewc, pretrain_with_fisher, TrainConfig};
use imbforge::mgvae::MgvaeConfig;
use imbforge::rng::{derived, seeded};
use imbforge::Result;

/// `(lambda, displacement, last fine-tune loss)` per lambda.
pub fn run(lambdas: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let data = synth_gaussians(300, 12, 3.0, &mut seeded(7))?;
    let majority = data.class_subset(0);
    let minority = data.class_subset(1);
    let mut model_cfg = MgvaeConfig::tabular(data.dim(), false);
    model_cfg.hidden = vec![16];
    model_cfg.latent_dim = 2;
    let mut cfg = TrainConfig {
        pretrain_epochs: 10,
        finetune_epochs: 30,
        prior_subsample: 16,
        fisher_sample_count: 32,
        ..TrainConfig::default()
    };
    let pre = pretrain_with_fisher(&model_cfg, majority.features(), &cfg, &mut seeded(1))?;
    let mut out = Vec::new();
    for &lambda in lambdas {
        cfg.lambda = lambda;
        let mut model = pre.model.clone();
        // Same stream for every lambda so only the penalty differs.
        let log = finetune_ewc(&mut model, minority.features(), majority.features(), &pre.ewc, &cfg, &mut derived(1, 1))?;
        let d = pre.ewc.displacement(&model.store().flat_values())?;
        out.push((lambda, d, log.last_loss().unwrap()));
    }
    Ok(out)
}

fn main() -> Result<()> {
    println!("{:>10} {:>14} {:>12}", "lambda", "displacement", "last loss");
    for (l, d, loss) in run(&[0.0, 5e2, 5e4, 5e6])? {
        println!("{l:>10.0e} {d:>14.6e} {loss:>12.4}");
    }
    Ok(())
}
