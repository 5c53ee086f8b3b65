//! Every example runs and its headline number holds.

#[allow(dead_code)]
#[path = "../examples/synthetic_bench.rs"]
mod synthetic_bench;
#[allow(dead_code)]
#[path = "../examples/mgvae_oversample.rs"]
mod mgvae_oversample;
#[allow(dead_code)]
#[path = "../examples/ewc_penalty.rs"]
mod ewc_penalty;
#[allow(dead_code)]
#[path = "../examples/smote_provenance.rs"]
mod smote_provenance;
#[allow(dead_code)]
#[path = "../examples/class_weights.rs"]
mod class_weights;
#[allow(dead_code)]
#[path = "../examples/metrics_report.rs"]
mod metrics_report;
#[allow(dead_code)]
#[path = "../examples/gradient_check.rs"]
mod gradient_check;
#[allow(dead_code)]
#[path = "../examples/lambda_sweep.rs"]
mod lambda_sweep;
#[allow(dead_code)]
#[path = "../examples/checkpoint_pipeline.rs"]
mod checkpoint_pipeline;
#[allow(dead_code)]
#[path = "../examples/idx_images.rs"]
mod idx_images;

use imbforge::baselines::effective_number;

#[test]
fn synthetic_bench_covers_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let rows = synthetic_bench::run(dir.path(), &[0]).unwrap();
    assert_eq!(rows.len(), 9);
    let gm = |label: &str| rows.iter().find(|r| r.label == label).unwrap().summary.mean.gm;
    assert!(gm("ros") > gm("erm"));
    assert!(dir.path().join("smote/seed-0/smote_provenance.csv").is_file());
}

#[test]
fn mgvae_oversample_balances() {
    let out = mgvae_oversample::run(0).unwrap();
    assert_eq!(out.dataset.class_counts(), vec![400, 400]);
    assert_eq!(out.synthetic_rows(), 380);
    assert_eq!(out.blocks[0].reference_indices.len(), 380);
}

#[test]
fn ewc_displacement_shrinks_with_lambda() {
    let rows = ewc_penalty::run(&[0.0, 5e2, 5e6]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].1 <= w[0].1, "{rows:?}");
    }
}

#[test]
fn smote_rows_rebuild_from_provenance() {
    let dir = tempfile::tempdir().unwrap();
    assert!(smote_provenance::run(dir.path()).unwrap() <= 1e-9);
}

#[test]
fn class_weight_ratio_matches_effective_numbers() {
    let ratio = class_weights::run(&[5381, 817], 0.9999).unwrap();
    let e = |n: f64| (1.0 - 0.9999f64.powf(n)) / (1.0 - 0.9999);
    assert!((ratio - e(5381.0) / e(817.0)).abs() < 1e-9);
    assert!((effective_number(817, 0.9999) - e(817.0)).abs() < 1e-6);
}

#[test]
fn metrics_report_aggregates() {
    let s = metrics_report::run().unwrap();
    assert_eq!(s.trials.len(), 3);
    assert!((s.mean.acsa - (0.5 + 0.6875 + 1.0) / 3.0).abs() < 1e-12);
}

#[test]
fn gradient_check_passes() {
    assert!(gradient_check::run(1e-5).unwrap() <= 1e-4);
}

#[test]
fn lambda_sweep_one_row_per_candidate() {
    let dir = tempfile::tempdir().unwrap();
    let rows = lambda_sweep::run(dir.path(), &[0], &[5e2, 5e6]).unwrap();
    assert_eq!(rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), ["5e2", "5e6"]);
    assert!(dir.path().join("sweep.txt").is_file());
}

#[test]
fn checkpoint_pipeline_balances() {
    let dir = tempfile::tempdir().unwrap();
    let art = checkpoint_pipeline::run(dir.path()).unwrap();
    assert_eq!(art.class_counts, vec![1000, 1000]);
    assert!(art.grids.is_empty());
}

#[test]
fn idx_images_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, small) = idx_images::run(dir.path(), 12).unwrap();
    assert_eq!(data.class_counts(), vec![3, 3, 3, 3]);
    assert_eq!(small.image_shape(), Some((4, 4)));
    assert_eq!(small.dim(), 16);
}
