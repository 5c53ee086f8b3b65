//! Re-weighting and margin baselines on the Musk class counts: inverse
//! frequency, class-balanced weights from effective numbers, LDAM margins
//! and the focal and LDAM losses on a single example.
//!
//! cargo run --example class_weights

use imbforge::baselines::{cbrw_weights, cross_entropy, focal_loss, ldam_loss, ldam_margins, rw_weights, softmax};
use imbforge::Result;

/// Minority over majority weight under class-balanced re-weighting.
pub fn run(counts: &[usize], beta: f64) -> Result<f64> {
    let rw = rw_weights(counts)?;
    let cb = cbrw_weights(counts, beta)?;
    println!("counts            {counts:?}");
    println!("inverse frequency {:?}", rw.weights);
    println!("effective numbers {:?}", cb.effective_numbers);
    println!("class-balanced    {:?}", cb.weights);
    println!("LDAM margins      {:?}", ldam_margins(counts, 0.5)?);

    let logits = [1.2, -0.3];
    let p = softmax(&logits);
    for y in 0..2 {
        println!(
            "label {y}: CE {:.4}  focal(2) {:.4}  LDAM {:.4}",
            cross_entropy(&logits, y),
            focal_loss(&p, y, 2.0),
            ldam_loss(&logits, y, counts, 0.5, false)?
        );
    }
    Ok(cb.weights[1] / cb.weights[0])
}

fn main() -> Result<()> {
    let ratio = run(&[5381, 817], 0.9999)?;
    println!("minority/majority weight ratio {ratio:.6}");
    Ok(())
}
