//! Acceptance criteria, one `[PASS]`/`[FAIL]` line each.
//!
//! Criteria 7 to 9 need the real datasets under `IMBFORGE_DATA_DIR` and
//! take tens of minutes, so they are ignored by default:
//!
//! cargo test --release --test acceptance -- --include-ignored --nocapture

use std::path::Path;
use std::time::Instant;

use imbforge::baselines::{cbrw_weights, cross_entropy, focal_loss, ldam_loss, nearest_neighbors, smote_oversample, softmax};
use imbforge::checkpoint::Checkpoint;
use imbforge::data::{load_idx_images, load_idx_labels, resolve_data_path, synth_gaussians, two_moons};
use imbforge::ewc::{ewc_step, pretrain_with_fisher, EwcState, TrainConfig};
use imbforge::experiment::{bundled_config, cmd_bench, cmd_pretrain, ExperimentConfig, Method, Scale};
use imbforge::metrics::{ConfusionMatrix, EvalReport};
use imbforge::mgvae::{MgvaeConfig, MgvaeModel, Noise, OutputLikelihood, PriorMode};
use imbforge::optim::{Adam, OptimConfig};
use imbforge::rng::{index, normal_tensor, seeded, uniform};
use imbforge::tensor::Tensor;

fn report(n: u32, what: &str, ok: bool, detail: &str) {
    println!("[{}] criterion {n}: {what} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn mgvae(input_dim: usize, hidden: Vec<usize>, latent_dim: usize, likelihood: OutputLikelihood, seed: u64) -> MgvaeModel {
    let cfg = MgvaeConfig {
        input_dim,
        hidden,
        latent_dim,
        likelihood,
        prior_mode: PriorMode::MajorityMixture,
    };
    MgvaeModel::new(cfg, &mut seeded(seed)).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (seed, lik) in [(1, OutputLikelihood::GaussianFixedVariance), (2, OutputLikelihood::Bernoulli)] {
        let mut model = mgvae(4, vec![6], 3, lik, seed);
        let mut rng = seeded(seed + 10);
        let x = match lik {
            OutputLikelihood::Bernoulli => normal_tensor(&mut rng, &[3, 4]).map(|v| 1.0 / (1.0 + (-v).exp())),
            OutputLikelihood::GaussianFixedVariance => normal_tensor(&mut rng, &[3, 4]),
        };
        let prior = normal_tensor(&mut rng, &[3, 4]);
        let eps = normal_tensor(&mut rng, &[3, 3]);
        model.store_mut().zero_grad();
        model.elbo_backward(&x, Some(&prior), &mut Noise::Fixed(&eps)).unwrap();
        let analytic = model.store().flat_grads();
        let base = model.store().flat_values();
        for i in 0..base.len() {
            let mut at = |d: f64| {
                let mut p = base.clone();
                p[i] += d;
                model.store_mut().set_flat_values(&p).unwrap();
                model.elbo(&x, Some(&prior), &mut Noise::Fixed(&eps)).unwrap().loss
            };
            let numeric = (at(h) - at(-h)) / (2.0 * h);
            let scale = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "reverse-mode gradient vs central differences, 4-3 MGVAE, S=3",
        worst <= 1e-4 && secs < 10.0,
        &format!("max rel err {worst:.2e} <= 1e-4, {secs:.2}s < 10s"),
    );
}

#[test]
fn criterion_02_mixture_prior_oracle() {
    let mut rng = seeded(2024);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let s = 1 + index(&mut rng, 8);
        let l = 1 + index(&mut rng, 4);
        let d = 2 + index(&mut rng, 4);
        let batch = 1 + index(&mut rng, 4);
        let mut model = mgvae(d, vec![5], l, OutputLikelihood::GaussianFixedVariance, case);
        let id = model.prior_log_sigma_id();
        model.store_mut().value_mut(id).data_mut()[0] = uniform(&mut rng, -1.0, 1.0);
        let prior_x = normal_tensor(&mut rng, &[s, d]);
        let z = normal_tensor(&mut rng, &[batch, l]);
        let got = model.log_mixture_prior(&z, &prior_x).unwrap();

        let means = model.prior_means(&prior_x).unwrap();
        let sigma2 = (2.0 * model.prior_log_sigma()).exp();
        for (b, g) in got.iter().enumerate() {
            let mut total = 0.0;
            for j in 0..s {
                let sq: f64 = (0..l).map(|k| (z.row(b)[k] - means.row(j)[k]).powi(2)).sum();
                total += (-sq / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).powf(l as f64 / 2.0);
            }
            worst = worst.max((g - (total / s as f64).ln()).abs());
        }
    }
    report(2, "log mixture prior vs exponentiate-sum-log, 200 cases", worst <= 1e-9, &format!("max abs err {worst:.2e} <= 1e-9"));
}

#[test]
fn criterion_03_ewc_mechanics() {
    let moons = two_moons(80, 12, 0.1, &mut seeded(1)).unwrap();
    let (maj, min) = (moons.class_subset(0), moons.class_subset(1));
    let model_cfg = MgvaeConfig {
        input_dim: 2,
        hidden: vec![16, 16],
        latent_dim: 2,
        likelihood: OutputLikelihood::Bernoulli,
        prior_mode: PriorMode::MajorityMixture,
    };
    let train = TrainConfig {
        pretrain_epochs: 3,
        prior_subsample: 8,
        fisher_sample_count: 20,
        optim: OptimConfig { batch_size: 20, ..OptimConfig::default() },
        ..TrainConfig::default()
    };
    let pre = pretrain_with_fisher(&model_cfg, maj.features(), &train, &mut seeded(3)).unwrap();
    let anchor_penalty = pre.ewc.penalty_at(&pre.ewc.reference, 5e6).unwrap();

    let mut rng = seeded(4);
    // Start at least 10 learning rates from the anchor so one Adam step
    // cannot overshoot it.
    let start: Vec<f64> = pre
        .ewc
        .reference
        .iter()
        .map(|r| {
            let m = uniform(&mut rng, 0.01, 0.02);
            if uniform(&mut rng, 0.0, 1.0) < 0.5 { r - m } else { r + m }
        })
        .collect();
    let prior = maj.features().select_rows(&[0, 1, 2, 3, 4, 5, 6, 7]);
    let eps = normal_tensor(&mut rng, &[min.len(), 2]);
    let step = |ewc: Option<(&EwcState, f64)>| {
        let mut m = pre.model.clone();
        m.store_mut().set_flat_values(&start).unwrap();
        let mut adam = Adam::new(m.store(), &OptimConfig::default());
        let t = ewc_step(&mut m, &mut adam, min.features(), &prior, ewc, &mut Noise::Fixed(&eps), 1e-3).unwrap();
        (m.store().flat_values(), t.elbo.loss + t.penalty)
    };
    let (plain, plain_loss) = step(None);
    let (zero, zero_loss) = step(Some((&pre.ewc, 0.0)));
    let lambda0_diff = plain.iter().zip(&zero).map(|(a, b)| (a - b).abs()).fold((plain_loss - zero_loss).abs(), f64::max);

    let displacements: Vec<f64> = [0.0, 5e2, 5e6]
        .iter()
        .map(|&l| pre.ewc.displacement(&step(Some((&pre.ewc, l))).0).unwrap())
        .collect();
    let monotone = displacements.windows(2).all(|w| w[1] <= w[0]);
    report(
        3,
        "EWC penalty zero at anchor, lambda=0 is plain, displacement non-increasing in lambda",
        anchor_penalty == 0.0 && lambda0_diff <= 1e-12 && monotone,
        &format!(
            "penalty at anchor {anchor_penalty}, lambda=0 diff {lambda0_diff:.1e}, displacements {}",
            displacements.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(" >= ")
        ),
    );
}

/// Published MNIST test-set digit histogram.
const MNIST_TEST_COUNTS: [u64; 10] = [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

#[test]
fn criterion_04_metric_oracle() {
    let mut rng = seeded(44);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = 2 + index(&mut rng, 5);
        let counts: Vec<Vec<u64>> = (0..k).map(|_| (0..k).map(|_| index(&mut rng, 40) as u64 + u64::from(index(&mut rng, 3) == 0)).collect()).collect();
        let counts: Vec<Vec<u64>> = counts
            .into_iter()
            .enumerate()
            .map(|(i, mut row)| {
                row[i] += 1;
                row
            })
            .collect();
        let m = ConfusionMatrix::from_counts(counts.clone()).unwrap().metrics().unwrap();
        // Hand-rolled: recall per row, then the three summaries.
        let recalls: Vec<f64> = counts.iter().enumerate().map(|(i, r)| r[i] as f64 / r.iter().sum::<u64>() as f64).collect();
        let total: u64 = counts.iter().flatten().sum();
        let trace: u64 = (0..k).map(|i| counts[i][i]).sum();
        let acsa = recalls.iter().sum::<f64>() / k as f64;
        let gm = recalls.iter().product::<f64>().powf(1.0 / k as f64);
        for (a, b) in [(m.b_acc, trace as f64 / total as f64), (m.acsa, acsa), (m.gm, gm)] {
            worst = worst.max((a - b).abs());
        }
    }

    // Constant-majority predictor on the binary relabeling (0-4 vs 5-9).
    let labels_path = resolve_data_path("mnist/t10k-labels-idx1-ubyte");
    let (digits, source): (Vec<u64>, &str) = match load_idx_labels(&labels_path) {
        Ok(l) => {
            let mut c = vec![0u64; 10];
            l.iter().for_each(|&d| c[d as usize] += 1);
            (c, "MNIST test labels")
        }
        Err(_) => (MNIST_TEST_COUNTS.to_vec(), "published MNIST test histogram"),
    };
    let major: u64 = digits[..5].iter().sum();
    let minor: u64 = digits[5..].iter().sum();
    let cm = ConfusionMatrix::from_counts(vec![vec![major, 0], vec![minor, 0]]).unwrap();
    let [b, a, g] = EvalReport::from_confusion(cm).unwrap().metrics.as_percent();
    report(
        4,
        "metrics vs recall oracle; constant-majority on binary MNIST test",
        worst <= 1e-12 && (b - 51.4).abs() <= 0.1 && a == 50.0 && g == 0.0,
        &format!("max err {worst:.1e}; B-ACC {b:.2}, ACSA {a:.1}, GM {g:.1} from {source}"),
    );
}

#[test]
fn criterion_05_baseline_formulas() {
    let mut rng = seeded(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = 2 + index(&mut rng, 6);
        let logits: Vec<f64> = (0..k).map(|_| uniform(&mut rng, -8.0, 8.0)).collect();
        let counts: Vec<usize> = (0..k).map(|_| 1 + index(&mut rng, 5000)).collect();
        let y = index(&mut rng, k);
        let ce = cross_entropy(&logits, y);
        worst = worst.max((focal_loss(&softmax(&logits), y, 0.0) - ce).abs());
        for tco in [false, true] {
            worst = worst.max((ldam_loss(&logits, y, &counts, 0.0, tco).unwrap() - ce).abs());
        }
    }
    let w = cbrw_weights(&[5381, 817], 0.9999).unwrap().weights;
    // E_n as the plain geometric series 1 + β + … + β^(n−1).
    let direct = |n: usize| (0..n).map(|i| 0.9999f64.powi(i as i32)).sum::<f64>();
    let oracle = direct(5381) / direct(817);
    let got = w[1] / w[0];
    let err = (got - oracle).abs();
    report(
        5,
        "focal(0) = CE, LDAM(0) = CE; CBRW ratio on (5381, 817)",
        worst <= 1e-12 && err <= 1e-9,
        &format!("max loss diff {worst:.1e}; ratio {got:.10} vs oracle {oracle:.10}, err {err:.1e}"),
    );
}

#[test]
fn criterion_06_smote_geometry() {
    let data = synth_gaussians(560, 60, 1.5, &mut seeded(6)).unwrap();
    let k = 5;
    let (bal, records) = smote_oversample(&data, k, &mut seeded(7)).unwrap();
    let mut residual = 0.0f64;
    let mut pairs_ok = true;
    let mut u_ok = true;
    for r in &records {
        let (x, nb) = (data.row(r.source_index), data.row(r.neighbor_index));
        for ((s, a), b) in bal.row(r.synthetic_index).iter().zip(x).zip(nb) {
            residual = residual.max((s - (a + r.u * (b - a))).abs());
        }
        u_ok &= (0.0..=1.0).contains(&r.u);
        // Independent brute-force kNN: the neighbour must be no farther
        // than the k-th nearest same-class point.
        let label = data.labels()[r.source_index];
        let mut d: Vec<f64> = data
            .indices_of(label)
            .into_iter()
            .filter(|&j| j != r.source_index)
            .map(|j| data.row(j).iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
            .collect();
        d.sort_by(f64::total_cmp);
        let dn: f64 = nb.iter().zip(x).map(|(p, q)| (p - q).powi(2)).sum();
        pairs_ok &= data.labels()[r.neighbor_index] == label && dn <= d[k - 1];
        pairs_ok &= nearest_neighbors(&data, &data.indices_of(label), r.source_index, k).contains(&r.neighbor_index);
    }
    report(
        6,
        "SMOTE rows rebuild from provenance and pair k-NN points",
        records.len() == 500 && residual <= 1e-9 && u_ok && pairs_ok,
        &format!("{} rows, max residual {residual:.1e}, u in [0,1]: {u_ok}, kNN pairs: {pairs_ok}", records.len()),
    );
}

fn dataset_present(cfg: &ExperimentConfig) -> bool {
    cfg.dataset.input_paths().iter().all(|p| p.is_file())
}

fn gm_of(cfg: &ExperimentConfig, method: Method, tweak: impl Fn(&mut ExperimentConfig), out: &Path) -> (f64, f64) {
    let mut c = cfg.clone();
    c.method = method;
    tweak(&mut c);
    c.output_dir = out.join(imbforge::experiment::run_label(&c));
    let s = cmd_bench(&c).unwrap().summary.mean;
    (s.b_acc * 100.0, s.gm * 100.0)
}

fn require_data(n: u32, what: &str, cfg: &ExperimentConfig) {
    if !dataset_present(cfg) {
        report(n, what, false, "dataset files not found; set IMBFORGE_DATA_DIR");
    }
}

#[test]
#[ignore = "needs the Musk dataset and about 20 minutes"]
fn criterion_07_musk_reproduction() {
    let what = "Musk: MGVAE B-ACC >= 88.0 and GM >= SMOTE GM + 2.0";
    let cfg = bundled_config("musk").unwrap();
    require_data(7, what, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let (b, g) = gm_of(&cfg, Method::Mgvae, |_| {}, dir.path());
    let (_, gs) = gm_of(&cfg, Method::Smote, |_| {}, dir.path());
    report(7, what, b >= 88.0 && g - gs >= 2.0, &format!("MGVAE B-ACC {b:.1}, GM {g:.1}; SMOTE GM {gs:.1}"));
}

fn small_mnist_600() -> ExperimentConfig {
    let mut cfg = bundled_config("mnist-600").unwrap();
    cfg.scale = Scale::Small;
    cfg.seeds = vec![0, 1, 2];
    cfg
}

#[test]
#[ignore = "needs MNIST and about 45 minutes"]
fn criterion_08_mnist_600_ordering() {
    let what = "MNIST-600 small: MGVAE GM >= SMOTE GM + 5.0 and > ERM GM";
    let cfg = small_mnist_600();
    require_data(8, what, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let (_, g) = gm_of(&cfg, Method::Mgvae, |_| {}, dir.path());
    let (_, gs) = gm_of(&cfg, Method::Smote, |_| {}, dir.path());
    let (_, ge) = gm_of(&cfg, Method::Erm, |_| {}, dir.path());
    report(8, what, g - gs >= 5.0 && g > ge, &format!("GM: MGVAE {g:.1}, SMOTE {gs:.1}, ERM {ge:.1}"));
}

#[test]
#[ignore = "needs MNIST and about an hour"]
fn criterion_09_ablation_ordering() {
    let what = "ablation: full >= no EWC >= no pretrain, 1.0 slack";
    let cfg = small_mnist_600();
    require_data(9, what, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let (_, full) = gm_of(&cfg, Method::Mgvae, |_| {}, dir.path());
    let (_, no_ewc) = gm_of(&cfg, Method::Mgvae, |c| c.train.disable_ewc = true, dir.path());
    let (_, no_pt) = gm_of(
        &cfg,
        Method::Mgvae,
        |c| {
            c.train.disable_pretrain = true;
            c.train.disable_ewc = true;
        },
        dir.path(),
    );
    let ok = full >= no_ewc - 1.0 && full >= no_pt - 1.0 && no_ewc >= no_pt - 1.0;
    report(9, what, ok, &format!("GM: full {full:.1}, no EWC {no_ewc:.1}, no pretrain {no_pt:.1}"));
}

#[test]
fn criterion_10_determinism_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let mut cfg = bundled_config("synthetic").unwrap();
        cfg.seeds = vec![0, 1];
        cfg.output_dir = dir.path().join(run).join("pre");
        let pre = cmd_pretrain(&cfg).unwrap();
        cfg.output_dir = dir.path().join(run).join("bench");
        cmd_bench(&cfg).unwrap();
        let read = |p: &Path| std::fs::read(p).unwrap();
        bytes.push((read(&pre.model), read(&pre.fisher), read(&cfg.output_dir.join("results.csv"))));
    }
    let deterministic = bytes[0] == bytes[1];

    let bad = dir.path().join("bad-idx");
    std::fs::write(&bad, [0u8, 0, 8, 4, 0, 0, 0, 0]).unwrap();
    let rejects_magic = load_idx_images(&bad).is_err() && load_idx_labels(&bad).is_err();

    let model = mgvae(6, vec![7, 5], 3, OutputLikelihood::Bernoulli, 10);
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = MgvaeModel::load(&path).unwrap();
    let bits = |m: &MgvaeModel| m.store().flat_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let round_trip = bits(&model) == bits(&back)
        && Checkpoint::load(&path).unwrap().to_bytes() == std::fs::read(&path).unwrap()
        && back.elbo(&Tensor::full(&[1, 6], 0.5), Some(&Tensor::full(&[2, 6], 0.25)), &mut Noise::Fixed(&Tensor::zeros(&[1, 3])))
            .unwrap()
            == model
                .elbo(&Tensor::full(&[1, 6], 0.5), Some(&Tensor::full(&[2, 6], 0.25)), &mut Noise::Fixed(&Tensor::zeros(&[1, 3])))
                .unwrap();
    report(
        10,
        "byte-identical reruns, IDX magic check, bit-exact checkpoint round trip",
        deterministic && rejects_magic && round_trip,
        &format!("reruns identical: {deterministic}, bad magic rejected: {rejects_magic}, round trip exact: {round_trip}"),
    );
}
