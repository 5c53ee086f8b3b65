//! Pipeline stages: method application, trials and the commands built on
//! them.

use std::path::{Path, PathBuf};

use crate::baselines::{cbrw_weights, ros_oversample, rw_weights, smote_oversample, write_smote_provenance, SmoteRecord};
use crate::checkpoint::Checkpoint;
use crate::classifier::{evaluate, train_classifier, ClassifierConfig, ClassifierLoss};
use crate::data::{sample_grid_pgm, save_dataset_csv, write_idx_images, write_idx_labels, LabeledDataset, Normalization};
use crate::error::{Error, Result};
use crate::ewc::{balance_with, finetune_ewc, head_class, pretrain_head, BalancedOutput, EwcState, Pretrained, TrainingLog};
use crate::io::atomic_write;
use crate::metrics::{aggregate_trials, format_table, write_results_csv, EvalReport, ResultRow, TableRow, TrialSummary};
use crate::mgvae::{MgvaeConfig, MgvaeModel, PriorMode};
use crate::params::ParamStore;
use crate::rng::{derived, sample_without_replacement};
use crate::tensor::Tensor;

use super::config::{ExperimentConfig, Method};
use super::data::{DataSource, Prepared};
use super::streams;

pub const MODEL_FILE: &str = "model.ckpt";
pub const FISHER_FILE: &str = "fisher.ckpt";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// The architecture for `train`: image data gets the image network,
/// tabular data the tabular one, then config overrides apply.
pub fn model_config(cfg: &ExperimentConfig, train: &LabeledDataset) -> MgvaeConfig {
    let mut m = if train.image_shape().is_some() {
        MgvaeConfig::image(train.dim())
    } else {
        MgvaeConfig::tabular(train.dim(), train.normalization() == Normalization::SignedUnit)
    };
    if let Some(h) = &cfg.model.hidden {
        m.hidden = h.clone();
    }
    if let Some(l) = cfg.model.latent_dim {
        m.latent_dim = l;
    }
    if let Some(l) = cfg.model.likelihood {
        m.likelihood = l;
    }
    if let Some(p) = cfg.model.prior {
        m.prior_mode = p;
    }
    if cfg.method == Method::VaeAblation {
        m.prior_mode = PriorMode::StandardNormal;
    }
    m
}

/// Name used in result files; generative ablation switches are appended.
pub fn run_label(cfg: &ExperimentConfig) -> String {
    let mut s = cfg.method.tag().to_string();
    if cfg.method == Method::Mgvae && cfg.model.prior == Some(PriorMode::StandardNormal) {
        s.push_str("-normal-prior");
    }
    if cfg.method.is_generative() {
        if cfg.train.disable_pretrain {
            s.push_str("-no-pretrain");
        }
        if cfg.train.disable_ewc {
            s.push_str("-no-ewc");
        }
    }
    s
}

/// What a method hands to the classifier.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub train: LabeledDataset,
    pub classifier: ClassifierConfig,
    pub balanced: Option<BalancedOutput>,
    pub smote: Option<Vec<SmoteRecord>>,
}

/// Pretrained model plus Fisher, either loaded from `cfg.checkpoint` or
/// trained on the head class of `train`.
pub fn obtain_pretrained(cfg: &ExperimentConfig, train: &LabeledDataset, seed: u64) -> Result<Pretrained> {
    let expected = model_config(cfg, train);
    match &cfg.checkpoint {
        Some(dir) => {
            let pre = load_pretrained(dir, cfg.train.effective_lambda())?;
            check_compatible(&pre.model, &expected)?;
            Ok(pre)
        }
        None => pretrain_head(train, &expected, &cfg.train, seed),
    }
}

fn check_compatible(model: &MgvaeModel, expected: &MgvaeConfig) -> Result<()> {
    let got = model.config();
    if got.input_dim != expected.input_dim {
        return Err(Error::Config(format!(
            "checkpoint expects {} input features, data has {}",
            got.input_dim, expected.input_dim
        )));
    }
    if got.prior_mode != expected.prior_mode {
        return Err(Error::Config(format!(
            "checkpoint prior is {}, config asks for {}",
            got.prior_mode.tag(),
            expected.prior_mode.tag()
        )));
    }
    Ok(())
}

pub fn apply_method(cfg: &ExperimentConfig, train: &LabeledDataset, seed: u64) -> Result<MethodOutput> {
    let mut rng = derived(seed, streams::METHOD);
    let mut clf = cfg.classifier.clone();
    let b = &cfg.baselines;
    let mut out = MethodOutput {
        train: train.clone(),
        classifier: clf.clone(),
        balanced: None,
        smote: None,
    };
    match cfg.method {
        Method::Erm => {}
        Method::Ros => out.train = ros_oversample(train, &mut rng)?,
        Method::Smote => {
            let (data, rec) = smote_oversample(train, b.smote_k, &mut rng)?;
            out.train = data;
            out.smote = Some(rec);
        }
        Method::Rw => clf.class_weights = Some(rw_weights(&train.class_counts())?.weights),
        Method::Cbrw => clf.class_weights = Some(cbrw_weights(&train.class_counts(), b.cbrw_beta)?.weights),
        Method::Focal => clf.loss = ClassifierLoss::Focal { gamma: b.focal_gamma },
        Method::Ldam => {
            clf.loss = ClassifierLoss::Ldam {
                max_margin: b.ldam_max_margin,
                true_class_only: b.ldam_true_class_only,
            }
        }
        Method::Mgvae | Method::VaeAblation => {
            let pre = obtain_pretrained(cfg, train, seed)?;
            let balanced = balance_with(train, &pre, &cfg.train, seed)?;
            out.train = balanced.dataset.clone();
            out.balanced = Some(balanced);
        }
    }
    out.classifier = clf;
    Ok(out)
}

/// One seed: realize data, apply the method, train and evaluate.
pub fn run_trial(source: &DataSource, cfg: &ExperimentConfig, seed: u64) -> Result<(EvalReport, MethodOutput, Prepared)> {
    let prepared = source.realize(seed)?;
    log::info!(
        "seed {seed}: {} train rows {:?}, {} test rows",
        prepared.train.len(),
        prepared.report.counts,
        prepared.test.len()
    );
    let method = apply_method(cfg, &prepared.train, seed)?;
    let clf = train_classifier(&method.train, &method.classifier, &mut derived(seed, streams::CLASSIFIER))?;
    let report = evaluate(&clf, &prepared.test)?;
    Ok((report, method, prepared))
}

pub fn save_pretrained(dir: &Path, pre: &Pretrained) -> Result<()> {
    pre.model.save(&dir.join(MODEL_FILE))?;
    let mut store = ParamStore::new();
    store.register("fisher", Tensor::vector(pre.ewc.fisher.clone()));
    Checkpoint::from_store(&store)
        .with_meta("kind", "fisher")
        .with_meta("lambda", pre.ewc.lambda)
        .save(&dir.join(FISHER_FILE))?;
    pre.log.save(&dir.join(PRETRAIN_LOG_FILE))
}

/// Reads a directory written by [`save_pretrained`]. The anchor is the
/// stored model itself.
pub fn load_pretrained(dir: &Path, lambda: f64) -> Result<Pretrained> {
    let model = MgvaeModel::load(&dir.join(MODEL_FILE))?;
    let ck = Checkpoint::load(&dir.join(FISHER_FILE))?;
    if ck.require_meta("kind")? != "fisher" {
        return Err(Error::Config(format!("{} is not a Fisher file", dir.join(FISHER_FILE).display())));
    }
    let reference = model.store().flat_values();
    if ck.values.len() != reference.len() {
        return Err(Error::Config(format!(
            "Fisher has {} entries, model has {} parameters",
            ck.values.len(),
            reference.len()
        )));
    }
    Ok(Pretrained {
        model,
        ewc: EwcState::new(reference, ck.values, lambda)?,
        log: TrainingLog::default(),
    })
}

/// Files written by [`cmd_pretrain`].
#[derive(Debug, Clone)]
pub struct PretrainArtifacts {
    pub dir: PathBuf,
    pub model: PathBuf,
    pub fisher: PathBuf,
    pub log: PathBuf,
}

fn prepare_run(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, DataSource)> {
    cfg.validate()?;
    let cfg = cfg.effective();
    let source = DataSource::open(&cfg.dataset, cfg.scale)?;
    Ok((cfg, source))
}

fn require_generative(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    if cfg.method.is_generative() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{command} needs method mgvae or vae_ablation, config has {}",
            cfg.method.tag()
        )))
    }
}

fn save_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    atomic_write(&dir.join("config.json"), cfg.to_json().as_bytes())
}

/// Pretrains on the head class for the first seed and writes the model,
/// its Fisher diagonal and the training log.
pub fn cmd_pretrain(given: &ExperimentConfig) -> Result<PretrainArtifacts> {
    require_generative(given, "pretrain")?;
    let (cfg, source) = prepare_run(given)?;
    let seed = cfg.seeds[0];
    let prepared = source.realize(seed)?;
    let pre = pretrain_head(&prepared.train, &model_config(&cfg, &prepared.train), &cfg.train, seed)?;
    let dir = cfg.output_dir.clone();
    save_pretrained(&dir, &pre)?;
    save_config(&dir, given)?;
    Ok(PretrainArtifacts {
        model: dir.join(MODEL_FILE),
        fisher: dir.join(FISHER_FILE),
        log: dir.join(PRETRAIN_LOG_FILE),
        dir,
    })
}

/// Fine-tunes one copy of the pretrained model per minority class and
/// writes `class-<k>.ckpt` with its log. Uses the same random streams as
/// oversampling, so the models match the ones that generate.
pub fn cmd_finetune(given: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    require_generative(given, "finetune")?;
    let (cfg, source) = prepare_run(given)?;
    let seed = cfg.seeds[0];
    let train = source.realize(seed)?.train;
    let pre = obtain_pretrained(&cfg, &train, seed)?;
    let head = head_class(&train)?;
    let majority = train.class_subset(head);
    let mut written = Vec::new();
    for k in (0..train.num_classes()).filter(|&k| k != head) {
        let mut model = pre.model.clone();
        let mut rng = derived(seed, k as u64 + 1);
        let log = finetune_ewc(
            &mut model,
            train.class_subset(k).features(),
            majority.features(),
            &pre.ewc,
            &cfg.train,
            &mut rng,
        )?;
        let path = cfg.output_dir.join(format!("class-{k}.ckpt"));
        model.save(&path)?;
        log.save(&cfg.output_dir.join(format!("class-{k}_log.csv")))?;
        written.push(path);
    }
    save_config(&cfg.output_dir, given)?;
    Ok(written)
}

/// Files written by [`cmd_oversample`].
#[derive(Debug, Clone)]
pub struct OversampleArtifacts {
    /// The balanced set: a CSV for tabular data, an images/labels IDX pair
    /// for image data.
    pub dataset: Vec<PathBuf>,
    pub class_counts: Vec<usize>,
    /// PGM sample grids with their size in tiles `(rows, cols)`.
    pub grids: Vec<(PathBuf, (usize, usize))>,
    pub provenance: Option<PathBuf>,
}

/// Writes a balanced copy of the training set for the first seed.
/// Generative methods also dump sample grids for image data.
pub fn cmd_oversample(given: &ExperimentConfig) -> Result<OversampleArtifacts> {
    if !matches!(given.method, Method::Mgvae | Method::VaeAblation | Method::Ros | Method::Smote) {
        return Err(Error::Config(format!(
            "oversample needs an oversampling method (ros, smote, mgvae, vae_ablation), config has {}",
            given.method.tag()
        )));
    }
    let (cfg, source) = prepare_run(given)?;
    let seed = cfg.seeds[0];
    let train = source.realize(seed)?.train;
    let out = apply_method(&cfg, &train, seed)?;
    let dir = &cfg.output_dir;
    let dataset = write_balanced(dir, &out.train)?;
    let mut provenance = None;
    if let Some(rec) = &out.smote {
        let p = dir.join("smote_provenance.csv");
        write_smote_provenance(&p, rec)?;
        provenance = Some(p);
    }
    let mut grids = Vec::new();
    if let (Some(bal), Some(shape)) = (&out.balanced, train.image_shape()) {
        let majority = train.class_subset(bal.head_class);
        let mut rng = derived(seed, streams::GRID);
        for block in &bal.blocks {
            let m = cfg.grid.rows.min(majority.len());
            let refs = sample_without_replacement(&mut rng, majority.len(), m);
            let repeated: Vec<usize> = refs.iter().flat_map(|&r| std::iter::repeat_n(r, cfg.grid.per_row)).collect();
            let samples = block.model.generate_from(majority.features(), &repeated, &mut rng)?;
            let path = dir.join(format!("samples-class-{}.pgm", block.class));
            let size = sample_grid_pgm(&path, shape, &majority.features().select_rows(&refs), &samples, cfg.grid.per_row)?;
            grids.push((path, size));
        }
    }
    save_config(dir, given)?;
    Ok(OversampleArtifacts {
        dataset,
        class_counts: out.train.class_counts(),
        grids,
        provenance,
    })
}

fn write_balanced(dir: &Path, data: &LabeledDataset) -> Result<Vec<PathBuf>> {
    match data.image_shape() {
        Some((rows, cols)) => {
            if data.num_classes() > 256 {
                return Err(Error::Config("IDX labels hold at most 256 classes".into()));
            }
            let pixels: Vec<u8> = data.features().data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
            let labels: Vec<u8> = data.labels().iter().map(|&l| l as u8).collect();
            let img = dir.join("balanced-images-idx3-ubyte");
            let lab = dir.join("balanced-labels-idx1-ubyte");
            write_idx_images(&img, rows, cols, &pixels)?;
            write_idx_labels(&lab, &labels)?;
            Ok(vec![img, lab])
        }
        None => {
            let p = dir.join("balanced.csv");
            save_dataset_csv(data, &p)?;
            Ok(vec![p])
        }
    }
}

/// Result of [`cmd_bench`].
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub label: String,
    pub rows: Vec<ResultRow>,
    pub summary: TrialSummary,
    /// Seeds that failed, with the reason.
    pub failures: Vec<(u64, String)>,
}

/// Runs every seed, writes `results.csv` (one row per seed) and
/// `summary.txt` (mean ± std). A failing seed is logged and skipped; the
/// run fails only when every seed fails.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let source = DataSource::open(&cfg.dataset, cfg.scale)?;
    bench_with(cfg, &source)
}

/// `given` is the config as written; the saved `config.json` is that one,
/// so rerunning it never applies the scale adjustments twice.
pub(crate) fn bench_with(given: &ExperimentConfig, source: &DataSource) -> Result<BenchOutcome> {
    let cfg = &given.effective();
    let label = run_label(cfg);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    for &seed in &cfg.seeds {
        match run_trial(source, cfg, seed).and_then(|(report, method, _)| {
            write_trial_logs(&cfg.output_dir.join(format!("seed-{seed}")), &method)?;
            Ok(report)
        }) {
            Ok(report) => {
                let [b, a, g] = report.metrics.as_percent();
                log::info!("{label} seed {seed}: B-ACC {b:.1} ACSA {a:.1} GM {g:.1}");
                rows.push(ResultRow {
                    method: label.clone(),
                    dataset: cfg.dataset.name.clone(),
                    seed,
                    metrics: report.metrics,
                });
                reports.push(report);
            }
            Err(e) => {
                log::error!("{label} seed {seed} failed: {e}");
                failures.push((seed, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    if reports.is_empty() {
        return Err(first_err.expect("at least one seed ran"));
    }
    let summary = aggregate_trials(&reports)?;
    write_results_csv(&cfg.output_dir.join(RESULTS_FILE), &rows)?;
    let table = format_table(
        &format!("{} on {}", label, cfg.dataset.name),
        "method",
        &[TableRow { label: label.clone(), summary: summary.clone() }],
    );
    atomic_write(&cfg.output_dir.join(SUMMARY_FILE), table.as_bytes())?;
    save_config(&cfg.output_dir, given)?;
    Ok(BenchOutcome {
        label,
        rows,
        summary,
        failures,
    })
}

fn write_trial_logs(dir: &Path, method: &MethodOutput) -> Result<()> {
    if let Some(bal) = &method.balanced {
        if !bal.pretrain_log.records.is_empty() {
            bal.pretrain_log.save(&dir.join(PRETRAIN_LOG_FILE))?;
        }
        for b in &bal.blocks {
            b.log.save(&dir.join(format!("finetune_class-{}_log.csv", b.class)))?;
        }
    }
    if let Some(rec) = &method.smote {
        write_smote_provenance(&dir.join("smote_provenance.csv"), rec)?;
    }
    Ok(())
}

/// One bench per λ candidate, each in `lambda-<λ>/`, plus `sweep.txt`.
pub fn cmd_lambda_sweep(cfg: &ExperimentConfig) -> Result<Vec<TableRow>> {
    require_generative(cfg, "lambda-sweep")?;
    if cfg.train.lambda_candidates.is_empty() {
        return Err(Error::Config("train.lambda_candidates must not be empty".into()));
    }
    cfg.validate()?;
    let source = DataSource::open(&cfg.dataset, cfg.scale)?;
    let mut table = Vec::new();
    for &lambda in &cfg.train.lambda_candidates {
        let mut sub = cfg.clone();
        sub.train.lambda = lambda;
        sub.output_dir = cfg.output_dir.join(format!("lambda-{}", lambda_label(lambda)));
        let outcome = bench_with(&sub, &source)?;
        table.push(TableRow {
            label: lambda_label(lambda),
            summary: outcome.summary,
        });
    }
    let text = format_table(&format!("{} lambda sweep on {}", run_label(cfg), cfg.dataset.name), "lambda", &table);
    atomic_write(&cfg.output_dir.join("sweep.txt"), text.as_bytes())?;
    Ok(table)
}

/// `5e2` style label for a λ value.
pub fn lambda_label(lambda: f64) -> String {
    format!("{lambda:e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::config::{DatasetSource, DatasetSpec, SyntheticKind};

    pub(crate) fn tiny(method: Method, out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_json(
            r#"{"dataset": {"name": "tiny", "source": {"kind": "synthetic", "generator": "gaussians",
                "n_major": 120, "n_minor": 12, "param": 3.0, "n_test_per_class": 30}}, "method": "erm"}"#,
        )
        .unwrap();
        cfg.method = method;
        cfg.seeds = vec![0, 1];
        cfg.output_dir = out.to_path_buf();
        cfg.model.hidden = Some(vec![8]);
        cfg.model.latent_dim = Some(2);
        cfg.train.pretrain_epochs = 2;
        cfg.train.finetune_epochs = 2;
        cfg.train.prior_subsample = 16;
        cfg.train.fisher_sample_count = 8;
        cfg.train.optim.batch_size = 32;
        cfg.classifier.hidden = vec![8];
        cfg.classifier.optim.epochs = 3;
        cfg.classifier.optim.batch_size = 32;
        cfg
    }

    #[test]
    fn labels_reflect_switches() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(Method::Mgvae, dir.path());
        assert_eq!(run_label(&c), "mgvae");
        c.train.disable_pretrain = true;
        c.train.disable_ewc = true;
        assert_eq!(run_label(&c), "mgvae-no-pretrain-no-ewc");
        assert_eq!(lambda_label(5e2), "5e2");
        assert_eq!(lambda_label(5e8), "5e8");
    }

    #[test]
    fn every_method_benches() {
        let dir = tempfile::tempdir().unwrap();
        for m in Method::ALL {
            let out = dir.path().join(m.tag());
            let r = cmd_bench(&tiny(m, &out)).unwrap();
            assert_eq!(r.rows.len(), 2, "{}", m.tag());
            assert!(out.join(RESULTS_FILE).is_file());
        }
    }

    #[test]
    fn pretrain_then_oversample_from_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let pre_dir = dir.path().join("pre");
        let art = cmd_pretrain(&tiny(Method::Mgvae, &pre_dir)).unwrap();
        assert!(art.model.is_file() && art.fisher.is_file());
        let mut cfg = tiny(Method::Mgvae, &dir.path().join("over"));
        cfg.checkpoint = Some(pre_dir.clone());
        let over = cmd_oversample(&cfg).unwrap();
        assert_eq!(over.class_counts, vec![120, 120]);
        assert!(over.grids.is_empty());
        let inline = cmd_oversample(&tiny(Method::Mgvae, &dir.path().join("inline"))).unwrap();
        assert_eq!(
            std::fs::read(&over.dataset[0]).unwrap(),
            std::fs::read(&inline.dataset[0]).unwrap()
        );
        let tuned = cmd_finetune(&cfg).unwrap();
        assert_eq!(tuned.len(), 1);
        let mut bad = tiny(Method::VaeAblation, &dir.path().join("bad"));
        bad.checkpoint = Some(pre_dir);
        assert!(matches!(cmd_oversample(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn non_generative_commands_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(cmd_pretrain(&tiny(Method::Ros, dir.path())), Err(Error::Config(_))));
        assert!(matches!(cmd_oversample(&tiny(Method::Rw, dir.path())), Err(Error::Config(_))));
        assert!(!dir.path().join(RESULTS_FILE).exists());
    }

    #[test]
    fn failed_dataset_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Method::Erm, &dir.path().join("out"));
        cfg.dataset = DatasetSpec {
            name: "missing".into(),
            source: DatasetSource::Csv {
                path: dir.path().join("nope.csv").display().to_string(),
                label_column: "class".into(),
                drop_columns: vec![],
                split: Default::default(),
            },
            imbalance: None,
        };
        assert!(cmd_bench(&cfg).is_err());
        assert!(!dir.path().join("out").exists());
        let _ = SyntheticKind::Moons;
    }
}
