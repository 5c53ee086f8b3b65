//! Small synthetic 2-D datasets for tests and examples.

use std::f64::consts::PI;

use super::{LabeledDataset, Normalization};
use crate::error::Result;
use crate::rng::{standard_normal, uniform, Rng};
use crate::tensor::Tensor;

/// Min-max rescales every column into `[0, 1]`.
fn rescale_unit(points: &mut [[f64; 2]]) {
    for j in 0..2 {
        let lo = points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for p in points.iter_mut() {
            p[j] = if span > 0.0 { ((p[j] - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
        }
    }
}

fn build(mut points: Vec<[f64; 2]>, labels: Vec<usize>) -> Result<LabeledDataset> {
    rescale_unit(&mut points);
    let n = points.len();
    let data = points.into_iter().flatten().collect();
    LabeledDataset::new(Tensor::matrix(n, 2, data)?, labels, 2, Normalization::UnitInterval)?
        .with_class_names(vec!["majority".into(), "minority".into()])
}

/// Majority (label 0) from N((0,0), I), minority (label 1) from
/// N((separation,0), I), jointly rescaled to `[0, 1]`.
pub fn synth_gaussians(n_major: usize, n_minor: usize, separation: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    let mut points = Vec::with_capacity(n_major + n_minor);
    let mut labels = Vec::with_capacity(n_major + n_minor);
    for (count, shift, label) in [(n_major, 0.0, 0), (n_minor, separation, 1)] {
        for _ in 0..count {
            let x = standard_normal(rng) + shift;
            let y = standard_normal(rng);
            points.push([x, y]);
            labels.push(label);
        }
    }
    build(points, labels)
}

/// Two interleaved half circles with Gaussian jitter of scale `noise`.
/// Label 0 is the upper moon, label 1 the lower.
pub fn two_moons(n_upper: usize, n_lower: usize, noise: f64, rng: &mut Rng) -> Result<LabeledDataset> {
    let mut points = Vec::with_capacity(n_upper + n_lower);
    let mut labels = Vec::with_capacity(n_upper + n_lower);
    for _ in 0..n_upper {
        let t = uniform(rng, 0.0, PI);
        points.push([t.cos() + noise * standard_normal(rng), t.sin() + noise * standard_normal(rng)]);
        labels.push(0);
    }
    for _ in 0..n_lower {
        let t = uniform(rng, 0.0, PI);
        points.push([
            1.0 - t.cos() + noise * standard_normal(rng),
            0.5 - t.sin() + noise * standard_normal(rng),
        ]);
        labels.push(1);
    }
    build(points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn counts_and_range() {
        let d = synth_gaussians(100, 10, 3.0, &mut seeded(1)).unwrap();
        assert_eq!(d.class_counts(), vec![100, 10]);
        assert!(d.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn deterministic() {
        let a = two_moons(50, 20, 0.1, &mut seeded(9)).unwrap();
        let b = two_moons(50, 20, 0.1, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }
}
