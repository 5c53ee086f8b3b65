//! The image path end to end on fabricated IDX files: binary relabeling,
//! 14×14 downsampling, balanced IDX output and PGM sample grids.

use std::path::Path;

use imbforge::data::{load_idx, write_idx_images, write_idx_labels};
use imbforge::experiment::{bundled_config, cmd_bench, cmd_oversample, DatasetSource, ExperimentConfig, Method, Scale};
use imbforge::rng::{index, seeded};

/// `per_class` 28×28 images per digit: a bright 6×6 block whose position
/// depends on the digit, over faint noise.
fn write_fake_digits(dir: &Path, prefix: &str, per_class: usize, seed: u64) -> (String, String) {
    let mut rng = seeded(seed);
    let (h, w) = (28, 28);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for i in 0..10 * per_class {
        let d = i % 10;
        let (r0, c0) = (2 + (d / 5) * 12, 2 + (d % 5) * 5);
        for r in 0..h {
            for c in 0..w {
                let on = (r0..r0 + 6).contains(&r) && (c0..c0 + 6).contains(&c);
                pixels.push(if on { 200 + index(&mut rng, 56) as u8 } else { index(&mut rng, 30) as u8 });
            }
        }
        labels.push(d as u8);
    }
    let img = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lab = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    write_idx_images(&img, h, w, &pixels).unwrap();
    write_idx_labels(&lab, &labels).unwrap();
    (img.to_string_lossy().into_owned(), lab.to_string_lossy().into_owned())
}

fn fake_mnist(dir: &Path) -> ExperimentConfig {
    let (train_images, train_labels) = write_fake_digits(dir, "train", 30, 1);
    let (test_images, test_labels) = write_fake_digits(dir, "test", 6, 2);
    let mut v: serde_json::Value = serde_json::from_str(&bundled_config("mnist-100").unwrap().to_json()).unwrap();
    v["dataset"]["source"] = serde_json::json!({
        "kind": "idx",
        "train_images": train_images, "train_labels": train_labels,
        "test_images": test_images, "test_labels": test_labels,
    });
    v["dataset"]["imbalance"]["groups"][0]["keep"] = serde_json::json!({"total": 100});
    v["dataset"]["imbalance"]["groups"][1]["keep"] = serde_json::json!({"per_class": 2});
    let mut cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
    cfg.scale = Scale::Small;
    cfg.seeds = vec![0];
    cfg.model.hidden = Some(vec![16]);
    cfg.model.latent_dim = Some(2);
    cfg.train.pretrain_epochs = 2;
    cfg.train.finetune_epochs = 2;
    cfg.train.prior_subsample = 20;
    cfg.train.fisher_sample_count = 20;
    cfg.classifier.hidden = vec![16];
    cfg.classifier.optim.epochs = 4;
    cfg.grid.rows = 3;
    cfg.grid.per_row = 4;
    cfg
}

#[test]
fn oversample_writes_balanced_idx_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fake_mnist(dir.path());
    cfg.output_dir = dir.path().join("over");
    let art = cmd_oversample(&cfg).unwrap();
    assert_eq!(art.class_counts, vec![100, 100]);

    let balanced = load_idx(&art.dataset[0], &art.dataset[1]).unwrap();
    assert_eq!(balanced.image_shape(), Some((14, 14)));
    assert_eq!(balanced.class_counts(), vec![100, 100]);

    assert_eq!(art.grids.len(), 1);
    let (path, tiles) = &art.grids[0];
    assert_eq!(*tiles, (3, 5));
    let bytes = std::fs::read(path).unwrap();
    let header = b"P5\n70 42\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 70 * 42);
}

#[test]
fn image_bench_relabels_the_test_set() {
    let dir = tempfile::tempdir().unwrap();
    for method in [Method::Erm, Method::Mgvae] {
        let mut cfg = fake_mnist(dir.path());
        cfg.method = method;
        cfg.output_dir = dir.path().join(method.tag());
        let out = cmd_bench(&cfg).unwrap();
        let b = out.summary.mean.b_acc;
        assert!((0.0..=1.0).contains(&b));
        assert_eq!(out.rows.len(), 1);
    }
}

#[test]
#[ignore = "needs MNIST under IMBFORGE_DATA_DIR and a long pretraining run"]
fn mnist_100_oversamples_to_30000_per_class() {
    let mut cfg = bundled_config("mnist-100").unwrap();
    if !cfg.dataset.input_paths().iter().all(|p| p.is_file()) {
        panic!("MNIST files not found; set IMBFORGE_DATA_DIR");
    }
    let dir = tempfile::tempdir().unwrap();
    cfg.seeds = vec![0];
    cfg.output_dir = dir.path().to_path_buf();
    assert!(matches!(cfg.dataset.source, DatasetSource::Idx { .. }));
    let art = cmd_oversample(&cfg).unwrap();
    assert_eq!(art.class_counts, vec![30000, 30000]);
}
