//! Reverse-mode gradients of the MGVAE loss against central finite
//! differences, with the reparameterization noise held fixed.
//!
//! cargo run --release --example gradient_check

use imbforge::mgvae::{MgvaeConfig, MgvaeModel, Noise, OutputLikelihood, PriorMode};
use imbforge::rng::{normal_tensor, seeded};
use imbforge::tensor::Tensor;
use imbforge::Result;

/// Largest relative error over every scalar parameter.
pub fn run(h: f64) -> Result<f64> {
    let mut rng = seeded(11);
    let cfg = MgvaeConfig {
        input_dim: 4,
        hidden: vec![5],
        latent_dim: 3,
        likelihood: OutputLikelihood::GaussianFixedVariance,
        prior_mode: PriorMode::MajorityMixture,
    };
    let mut model = MgvaeModel::new(cfg, &mut rng)?;
    let x = normal_tensor(&mut rng, &[2, 4]);
    let prior = normal_tensor(&mut rng, &[3, 4]);
    let eps: Tensor = normal_tensor(&mut rng, &[2, 3]);

    model.store_mut().zero_grad();
    model.elbo_backward(&x, Some(&prior), &mut Noise::Fixed(&eps))?;
    let analytic = model.store().flat_grads();
    let base = model.store().flat_values();

    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut at = |delta: f64| -> Result<f64> {
            let mut p = base.clone();
            p[i] += delta;
            model.store_mut().set_flat_values(&p)?;
            Ok(model.elbo(&x, Some(&prior), &mut Noise::Fixed(&eps))?.loss)
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    model.store_mut().set_flat_values(&base)?;
    println!("{} parameters checked", base.len());
    Ok(worst)
}

fn main() -> Result<()> {
    println!("max relative error {:.3e}", run(1e-5)?);
    Ok(())
}
