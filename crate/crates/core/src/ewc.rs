//! Pretrain on the majority, fine-tune on a minority class under an
//! elastic weight consolidation penalty, and balance a dataset with one
//! fine-tuned model per minority class.
//!
//! The fine-tune objective is `negative ELBO + λ Σ_i F_i (Ψ_i − Ψ⁺_i)²`
//! where `Ψ⁺` is the pretrained parameter vector and `F` the diagonal
//! empirical Fisher (mean squared per-sample gradient) measured on samples
//! generated by the pretrained model. Prior batches always come from the
//! majority.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::mgvae::{ElboTerms, MgvaeConfig, MgvaeModel, Noise};
use crate::optim::{minibatches, Adam, OptimConfig};
use crate::rng::{derived, sample_without_replacement, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    /// Majority rows per prior batch (`S`).
    pub prior_subsample: usize,
    pub fisher_sample_count: usize,
    pub lambda: f64,
    pub lambda_candidates: Vec<f64>,
    pub disable_pretrain: bool,
    pub disable_ewc: bool,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 50,
            finetune_epochs: 100,
            prior_subsample: 200,
            fisher_sample_count: 500,
            lambda: 5e4,
            lambda_candidates: vec![5e2, 5e4, 5e6, 5e8],
            disable_pretrain: false,
            disable_ewc: false,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        if self.pretrain_epochs == 0 || self.finetune_epochs == 0 {
            return Err(Error::Config("train.pretrain_epochs and train.finetune_epochs must be positive".into()));
        }
        if self.prior_subsample == 0 {
            return Err(Error::Config("train.prior_subsample must be positive".into()));
        }
        if self.fisher_sample_count == 0 {
            return Err(Error::Config("train.fisher_sample_count must be positive".into()));
        }
        if !(self.lambda >= 0.0) || self.lambda_candidates.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("train.lambda values must be non-negative".into()));
        }
        Ok(())
    }

    /// The effective penalty weight.
    pub fn effective_lambda(&self) -> f64 {
        if self.disable_ewc {
            0.0
        } else {
            self.lambda
        }
    }

    fn check_majority(&self, n_major: usize) -> Result<()> {
        if n_major < self.prior_subsample {
            return Err(Error::Config(format!(
                "train.prior_subsample = {} exceeds the {n_major} majority rows",
                self.prior_subsample
            )));
        }
        Ok(())
    }
}

/// Anchor point, Fisher diagonal and penalty weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EwcState {
    pub reference: Vec<f64>,
    pub fisher: Vec<f64>,
    pub lambda: f64,
}

impl EwcState {
    pub fn new(reference: Vec<f64>, fisher: Vec<f64>, lambda: f64) -> Result<Self> {
        if reference.len() != fisher.len() {
            return Err(Error::Shape(format!(
                "{} reference values but {} Fisher entries",
                reference.len(),
                fisher.len()
            )));
        }
        if let Some(f) = fisher.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
            return Err(Error::Numeric(format!("Fisher entry {f} is not a finite non-negative number")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {lambda} must be non-negative")));
        }
        Ok(EwcState {
            reference,
            fisher,
            lambda,
        })
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.reference.len() {
            return Err(Error::Shape(format!(
                "{} parameters against a {}-entry EWC anchor",
                params.len(),
                self.reference.len()
            )));
        }
        Ok(())
    }

    /// `Σ F_i (Ψ_i − Ψ⁺_i)²`.
    pub fn displacement(&self, params: &[f64]) -> Result<f64> {
        self.check_len(params)?;
        Ok(params
            .iter()
            .zip(&self.reference)
            .zip(&self.fisher)
            .map(|((p, r), f)| f * (p - r) * (p - r))
            .sum())
    }

    /// `λ Σ F_i (Ψ_i − Ψ⁺_i)²` at weight `lambda`.
    pub fn penalty_at(&self, params: &[f64], lambda: f64) -> Result<f64> {
        Ok(lambda * self.displacement(params)?)
    }

    pub fn penalty(&self, params: &[f64]) -> Result<f64> {
        self.penalty_at(params, self.lambda)
    }

    /// `2 λ F_i (Ψ_i − Ψ⁺_i)`.
    pub fn penalty_grad_at(&self, params: &[f64], lambda: f64) -> Result<Vec<f64>> {
        self.check_len(params)?;
        Ok(params
            .iter()
            .zip(&self.reference)
            .zip(&self.fisher)
            .map(|((p, r), f)| 2.0 * lambda * f * (p - r))
            .collect())
    }
}

/// Per-epoch means of one training stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub kl: f64,
    pub recon: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,kl,recon,penalty\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.loss, r.kl, r.recon, r.penalty));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_csv().as_bytes())
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

#[derive(Default)]
struct EpochAccumulator {
    rows: usize,
    loss: f64,
    kl: f64,
    recon: f64,
    penalty: f64,
}

impl EpochAccumulator {
    fn add(&mut self, rows: usize, t: &ElboTerms, penalty: f64) {
        let w = rows as f64;
        self.rows += rows;
        self.loss += w * (t.loss + penalty);
        self.kl += w * t.kl;
        self.recon += w * t.recon;
        self.penalty += w * penalty;
    }

    fn finish(self, epoch: usize) -> EpochRecord {
        let n = self.rows.max(1) as f64;
        EpochRecord {
            epoch,
            loss: self.loss / n,
            kl: self.kl / n,
            recon: self.recon / n,
            penalty: self.penalty / n,
        }
    }
}

fn prior_batch(majority: &Tensor, s: usize, rng: &mut Rng) -> Tensor {
    majority.select_rows(&sample_without_replacement(rng, majority.rows(), s))
}

/// Values reported by one optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTerms {
    pub elbo: ElboTerms,
    pub penalty: f64,
}

/// One Adam step on `negative ELBO(batch) + λ Σ F (Ψ − Ψ⁺)²`. The penalty
/// gradient is added analytically to the ELBO gradient.
#[allow(clippy::too_many_arguments)]
pub fn ewc_step(
    model: &mut MgvaeModel,
    adam: &mut Adam,
    batch: &Tensor,
    prior_x: &Tensor,
    ewc: Option<(&EwcState, f64)>,
    noise: &mut Noise<'_>,
    lr: f64,
) -> Result<StepTerms> {
    model.store_mut().zero_grad();
    let elbo = model.elbo_backward(batch, Some(prior_x), noise)?;
    let mut penalty = 0.0;
    if let Some((state, lambda)) = ewc {
        if lambda > 0.0 {
            let params = model.store().flat_values();
            penalty = state.penalty_at(&params, lambda)?;
            if !penalty.is_finite() {
                return Err(Error::Numeric(format!("EWC penalty is {penalty}")));
            }
            model.store_mut().add_flat_grads(&state.penalty_grad_at(&params, lambda)?)?;
        }
    }
    adam.step(model.store_mut(), lr)?;
    Ok(StepTerms { elbo, penalty })
}

/// Trains on majority rows for `cfg.pretrain_epochs` epochs, drawing a
/// fresh `S`-row prior batch each step. With `disable_pretrain` the model
/// is left at its initialization and the log is empty.
pub fn pretrain(model: &mut MgvaeModel, majority: &Tensor, cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainingLog> {
    cfg.validate()?;
    cfg.check_majority(majority.rows())?;
    let mut log = TrainingLog::default();
    if cfg.disable_pretrain {
        return Ok(log);
    }
    let mut adam = Adam::new(model.store(), &cfg.optim);
    let mut step = 0usize;
    for epoch in 0..cfg.pretrain_epochs {
        let lr = cfg.optim.lr_at(epoch);
        let mut acc = EpochAccumulator::default();
        for idx in minibatches(majority.rows(), cfg.optim.batch_size, rng)? {
            let batch = majority.select_rows(&idx);
            let prior_x = prior_batch(majority, cfg.prior_subsample, rng);
            let t = ewc_step(model, &mut adam, &batch, &prior_x, None, &mut Noise::Sample(rng), lr)
                .map_err(|e| at_step(e, "pretrain", step))?;
            if !t.elbo.loss.is_finite() {
                return Err(Error::Numeric(format!("pretrain loss is {} at step {step}", t.elbo.loss)));
            }
            acc.add(idx.len(), &t.elbo, 0.0);
            step += 1;
        }
        let rec = acc.finish(epoch);
        log::debug!("pretrain epoch {epoch}: loss {:.4}", rec.loss);
        log.records.push(rec);
    }
    Ok(log)
}

fn at_step(e: Error, stage: &str, step: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("{stage} step {step}: {m}")),
        other => other,
    }
}

/// Mean over `n` samples of the squared per-sample gradient.
pub fn empirical_fisher(n: usize, mut per_sample_grad: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("fisher_sample_count must be positive".into()));
    }
    let mut fisher: Vec<f64> = Vec::new();
    for i in 0..n {
        let g = per_sample_grad(i)?;
        if fisher.is_empty() {
            fisher = vec![0.0; g.len()];
        } else if g.len() != fisher.len() {
            return Err(Error::Shape(format!("gradient length changed from {} to {}", fisher.len(), g.len())));
        }
        for (f, v) in fisher.iter_mut().zip(&g) {
            *f += v * v;
        }
    }
    let inv = 1.0 / n as f64;
    fisher.iter_mut().for_each(|f| *f *= inv);
    if let Some(f) = fisher.iter().find(|f| !f.is_finite()) {
        return Err(Error::Numeric(format!("Fisher entry {f} is not finite")));
    }
    Ok(fisher)
}

/// Diagonal Fisher of the per-sample negative ELBO over samples generated
/// by `model` from the majority.
pub fn estimate_fisher(model: &MgvaeModel, majority: &Tensor, cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    if cfg.fisher_sample_count == 0 {
        return Err(Error::Config("train.fisher_sample_count must be positive".into()));
    }
    cfg.check_majority(majority.rows())?;
    let (samples, _) = model.generate(majority, cfg.fisher_sample_count, rng)?;
    let mut work = model.clone();
    empirical_fisher(samples.rows(), |i| {
        let x = samples.select_rows(&[i]);
        let prior_x = prior_batch(majority, cfg.prior_subsample, rng);
        work.store_mut().zero_grad();
        work.elbo_backward(&x, Some(&prior_x), &mut Noise::Sample(rng))?;
        Ok(work.store().flat_grads())
    })
}

/// Fine-tunes on minority rows with majority prior batches. The batch size
/// is `min(optim.batch_size, N⁻)`; Adam state starts fresh. The penalty
/// weight is `cfg.effective_lambda()`, not `ewc.lambda`, so one anchor can
/// serve several weights.
pub fn finetune_ewc(
    model: &mut MgvaeModel,
    minority: &Tensor,
    majority: &Tensor,
    ewc: &EwcState,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    cfg.validate()?;
    cfg.check_majority(majority.rows())?;
    if minority.rows() == 0 {
        return Err(Error::Data("minority set is empty".into()));
    }
    let lambda = cfg.effective_lambda();
    let batch_size = cfg.optim.batch_size.min(minority.rows());
    let mut adam = Adam::new(model.store(), &cfg.optim);
    let mut log = TrainingLog::default();
    let mut step = 0usize;
    for epoch in 0..cfg.finetune_epochs {
        let lr = cfg.optim.lr_at(epoch);
        let mut acc = EpochAccumulator::default();
        for idx in minibatches(minority.rows(), batch_size, rng)? {
            let batch = minority.select_rows(&idx);
            let prior_x = prior_batch(majority, cfg.prior_subsample, rng);
            let t = ewc_step(model, &mut adam, &batch, &prior_x, Some((ewc, lambda)), &mut Noise::Sample(rng), lr)
                .map_err(|e| at_step(e, "finetune", step))?;
            if !t.elbo.loss.is_finite() {
                return Err(Error::Numeric(format!("finetune loss is {} at step {step}", t.elbo.loss)));
            }
            acc.add(idx.len(), &t.elbo, t.penalty);
            step += 1;
        }
        let rec = acc.finish(epoch);
        log::debug!("finetune epoch {epoch}: loss {:.4} penalty {:.4}", rec.loss, rec.penalty);
        log.records.push(rec);
    }
    Ok(log)
}

/// Pretrained model with its EWC anchor.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: MgvaeModel,
    pub ewc: EwcState,
    pub log: TrainingLog,
}

/// Builds, pretrains and measures the Fisher of a fresh model. With
/// `disable_ewc` the Fisher is left at zero and not estimated.
pub fn pretrain_with_fisher(
    model_cfg: &MgvaeConfig,
    majority: &Tensor,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Pretrained> {
    cfg.validate()?;
    let mut model = MgvaeModel::new(model_cfg.clone(), rng)?;
    let log = pretrain(&mut model, majority, cfg, rng)?;
    let reference = model.store().flat_values();
    let fisher = if cfg.disable_ewc {
        vec![0.0; reference.len()]
    } else {
        estimate_fisher(&model, majority, cfg, rng)?
    };
    let ewc = EwcState::new(reference, fisher, cfg.effective_lambda())?;
    Ok(Pretrained { model, ewc, log })
}

/// Synthetic rows generated for one minority class.
#[derive(Debug, Clone)]
pub struct GeneratedBlock {
    pub class: usize,
    pub samples: Tensor,
    /// Majority row (within the head class) each sample was generated from.
    pub reference_indices: Vec<usize>,
    pub log: TrainingLog,
    /// The fine-tuned model that produced `samples`.
    pub model: MgvaeModel,
}

#[derive(Debug, Clone)]
pub struct BalancedOutput {
    pub dataset: LabeledDataset,
    pub head_class: usize,
    pub pretrain_log: TrainingLog,
    pub blocks: Vec<GeneratedBlock>,
}

impl BalancedOutput {
    pub fn synthetic_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.samples.rows()).sum()
    }
}

/// Balances every class up to the largest class `C₁` (lowest index on
/// ties). One model is pretrained on `C₁`, then cloned and fine-tuned per
/// minority class `k` with an rng derived from `(seed, k)`; each clone
/// generates `N₁ − N_k` rows. Original rows come first, unchanged.
pub fn build_balanced_dataset(
    train: &LabeledDataset,
    model_cfg: &MgvaeConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BalancedOutput> {
    let pre = pretrain_head(train, model_cfg, cfg, seed)?;
    balance_with(train, &pre, cfg, seed)
}

/// Pretraining half of [`build_balanced_dataset`] on the head class.
pub fn pretrain_head(train: &LabeledDataset, model_cfg: &MgvaeConfig, cfg: &TrainConfig, seed: u64) -> Result<Pretrained> {
    let head = head_class(train)?;
    let majority = train.class_subset(head);
    pretrain_with_fisher(model_cfg, majority.features(), cfg, &mut derived(seed, 0))
}

/// Fine-tune and generation half of [`build_balanced_dataset`].
pub fn balance_with(train: &LabeledDataset, pre: &Pretrained, cfg: &TrainConfig, seed: u64) -> Result<BalancedOutput> {
    let head = head_class(train)?;
    let counts = train.class_counts();
    let majority = train.class_subset(head);
    let mut blocks = Vec::new();
    let mut out = train.clone();
    for (k, &n_k) in counts.iter().enumerate() {
        if k == head {
            continue;
        }
        let mut rng = derived(seed, k as u64 + 1);
        let minority = train.class_subset(k);
        let mut model = pre.model.clone();
        let log = finetune_ewc(&mut model, minority.features(), majority.features(), &pre.ewc, cfg, &mut rng)?;
        let need = counts[head] - n_k;
        let (samples, refs) = model.generate(majority.features(), need, &mut rng)?;
        let samples = clamp_to(&samples, train);
        out = out.append_rows(&samples, &vec![k; need])?;
        blocks.push(GeneratedBlock {
            class: k,
            samples,
            reference_indices: refs,
            log,
            model,
        });
    }
    Ok(BalancedOutput {
        dataset: out,
        head_class: head,
        pretrain_log: pre.log.clone(),
        blocks,
    })
}

/// Gaussian decoders can leave the data range; clamp into the dataset's
/// normalization bounds so the balanced set stays valid.
fn clamp_to(samples: &Tensor, data: &LabeledDataset) -> Tensor {
    let (lo, hi) = data.normalization().bounds();
    samples.map(|v| v.clamp(lo, hi))
}

/// The largest class, lowest index on ties. Every class must be non-empty.
pub fn head_class(train: &LabeledDataset) -> Result<usize> {
    let counts = train.class_counts();
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {k} has no training rows")));
    }
    if counts.len() < 2 {
        return Err(Error::Data("balancing needs at least two classes".into()));
    }
    let max = *counts.iter().max().expect("non-empty");
    Ok(counts.iter().position(|&c| c == max).expect("max exists"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::two_moons;
    use crate::mgvae::{OutputLikelihood, PriorMode};
    use crate::params::ParamStore;
    use crate::rng::{seeded, uniform};
    use proptest::prelude::*;

    fn small_cfg() -> MgvaeConfig {
        MgvaeConfig {
            input_dim: 2,
            hidden: vec![16, 16],
            latent_dim: 2,
            likelihood: OutputLikelihood::Bernoulli,
            prior_mode: PriorMode::MajorityMixture,
        }
    }

    fn quick_train() -> TrainConfig {
        TrainConfig {
            pretrain_epochs: 2,
            finetune_epochs: 2,
            prior_subsample: 8,
            fisher_sample_count: 10,
            optim: OptimConfig {
                batch_size: 20,
                ..OptimConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn penalty_cases() {
        let ewc = EwcState::new(vec![1.0, 2.0, 3.0], vec![1.0; 3], 7.0).unwrap();
        assert_eq!(ewc.penalty(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(ewc.penalty(&[1.0, 3.0, 3.0]).unwrap(), 7.0);
        assert_eq!(ewc.penalty_grad_at(&[1.0, 3.0, 3.0], 7.0).unwrap(), vec![0.0, 14.0, 0.0]);
        assert!(EwcState::new(vec![0.0], vec![-1.0], 1.0).is_err());
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        let n = 6;
        let r: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let f: Vec<f64> = (0..n).map(|_| uniform(&mut rng, 0.0, 2.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -1.0, 1.0)).collect();
        let ewc = EwcState::new(r, f, 3.0).unwrap();
        let g = ewc.penalty_grad_at(&p, 3.0).unwrap();
        for i in 0..n {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += 1e-5;
            b[i] -= 1e-5;
            let fd = (ewc.penalty(&a).unwrap() - ewc.penalty(&b).unwrap()) / 2e-5;
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn fisher_of_scalar_quadratic_is_one() {
        // L(ψ) = (ψ − a)²/2 at ψ = a + 1: gradient 1 for every sample.
        let a = 0.75;
        let psi = a + 1.0;
        let f = empirical_fisher(5, |_| Ok(vec![psi - a])).unwrap();
        assert_eq!(f, vec![1.0]);
        assert!(matches!(empirical_fisher(0, |_| Ok(vec![])), Err(Error::Config(_))));
    }

    #[test]
    fn fisher_is_zero_for_unused_parameter() {
        // A relu unit that is off for every input gives its outgoing
        // weight a zero gradient everywhere.
        let mut store = ParamStore::new();
        let w_in = store.register("w_in", Tensor::vector(vec![-1.0]));
        let w_out = store.register("w_out", Tensor::vector(vec![0.3]));
        let xs = [0.5, 1.0, 2.0];
        let f = empirical_fisher(xs.len(), |i| {
            let g = crate::autodiff::Graph::new();
            let x = g.constant(Tensor::vector(vec![xs[i]]));
            let h = x.mul(g.param(&store, w_in))?.relu()?;
            let y = h.mul(g.param(&store, w_out))?.add(x)?.square()?.sum()?;
            let grads = g.backward(y)?;
            let mut s = store.clone();
            s.zero_grad();
            grads.accumulate_into(&mut s);
            Ok(s.flat_grads())
        })
        .unwrap();
        assert_eq!(f[1], 0.0);
        assert!(f.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn lambda_zero_is_plain_objective() {
        let moons = two_moons(60, 20, 0.1, &mut seeded(1)).unwrap();
        let maj = moons.class_subset(0);
        let min = moons.class_subset(1);
        let model = MgvaeModel::new(small_cfg(), &mut seeded(2)).unwrap();
        let mut displaced = model.clone();
        let params: Vec<f64> = displaced.store().flat_values().iter().map(|v| v + 0.1).collect();
        displaced.store_mut().set_flat_values(&params).unwrap();
        let ewc = EwcState::new(model.store().flat_values(), vec![1.0; params.len()], 0.0).unwrap();
        let cfg = TrainConfig::default();
        let run = |ewc_arg: Option<(&EwcState, f64)>| {
            let mut m = displaced.clone();
            let mut adam = Adam::new(m.store(), &cfg.optim);
            let mut rng = seeded(5);
            let prior = maj.features().select_rows(&[0, 1, 2, 3]);
            ewc_step(&mut m, &mut adam, min.features(), &prior, ewc_arg, &mut Noise::Sample(&mut rng), 1e-3).unwrap();
            m.store().flat_values()
        };
        assert_eq!(run(Some((&ewc, 0.0))), run(None));
    }

    #[test]
    fn disable_pretrain_keeps_initialization() {
        let moons = two_moons(40, 10, 0.1, &mut seeded(1)).unwrap();
        let maj = moons.class_subset(0);
        let cfg = TrainConfig {
            disable_pretrain: true,
            ..quick_train()
        };
        let init = MgvaeModel::new(small_cfg(), &mut seeded(7)).unwrap();
        let pre = pretrain_with_fisher(&small_cfg(), maj.features(), &cfg, &mut seeded(7)).unwrap();
        assert_eq!(pre.ewc.reference, init.store().flat_values());
        assert!(pre.log.records.is_empty());
    }

    #[test]
    fn pretrain_is_deterministic() {
        let moons = two_moons(60, 10, 0.1, &mut seeded(1)).unwrap();
        let maj = moons.class_subset(0);
        let a = pretrain_with_fisher(&small_cfg(), maj.features(), &quick_train(), &mut seeded(3)).unwrap();
        let b = pretrain_with_fisher(&small_cfg(), maj.features(), &quick_train(), &mut seeded(3)).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.ewc.reference), bits(&b.ewc.reference));
        assert_eq!(bits(&a.ewc.fisher), bits(&b.ewc.fisher));
        assert!(a.ewc.fisher.iter().all(|f| *f >= 0.0 && f.is_finite()));
    }

    #[test]
    fn prior_subsample_larger_than_majority_is_rejected() {
        let moons = two_moons(5, 5, 0.1, &mut seeded(1)).unwrap();
        let maj = moons.class_subset(0);
        let r = pretrain_with_fisher(&small_cfg(), maj.features(), &quick_train(), &mut seeded(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn balancing_three_classes() {
        let moons = two_moons(40, 12, 0.1, &mut seeded(1)).unwrap();
        let third = moons.class_subset(1).subset(&[0, 1, 2, 3, 4]).relabel(|_| 2, 3).unwrap();
        let base = moons.relabel(|l| l, 3).unwrap();
        let train = base.append_rows(third.features(), third.labels()).unwrap();
        let out = build_balanced_dataset(&train, &small_cfg(), &quick_train(), 11).unwrap();
        assert_eq!(out.dataset.class_counts(), vec![40, 40, 40]);
        assert_eq!(out.blocks.len(), 2);
        assert_eq!(out.synthetic_rows(), 28 + 35);
        for i in 0..train.len() {
            assert_eq!(out.dataset.row(i), train.row(i));
            assert_eq!(out.dataset.labels()[i], train.labels()[i]);
        }
    }

    #[test]
    fn empty_class_is_data_error() {
        let moons = two_moons(10, 10, 0.1, &mut seeded(1)).unwrap();
        let three = moons.relabel(|l| l, 3).unwrap();
        assert!(matches!(
            build_balanced_dataset(&three, &small_cfg(), &quick_train(), 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn larger_lambda_moves_less_in_fisher_metric() {
        let moons = two_moons(60, 10, 0.1, &mut seeded(1)).unwrap();
        let maj = moons.class_subset(0);
        let min = moons.class_subset(1);
        let pre = pretrain_with_fisher(&small_cfg(), maj.features(), &quick_train(), &mut seeded(3)).unwrap();
        // Start well away from the anchor (|Ψ − Ψ⁺| ≥ 10·lr) so one Adam
        // step cannot overshoot it.
        let mut rng = seeded(4);
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
        let eps = crate::rng::normal_tensor(&mut rng, &[min.len(), 2]);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 5e2, 5e6] {
            let mut m = pre.model.clone();
            m.store_mut().set_flat_values(&start).unwrap();
            let mut adam = Adam::new(m.store(), &OptimConfig::default());
            ewc_step(&mut m, &mut adam, min.features(), &prior, Some((&pre.ewc, lambda)), &mut Noise::Fixed(&eps), 1e-3).unwrap();
            let d = pre.ewc.displacement(&m.store().flat_values()).unwrap();
            assert!(d <= last, "lambda {lambda}: {d} > {last}");
            last = d;
        }
    }

    #[test]
    fn training_log_csv() {
        let log = TrainingLog {
            records: vec![EpochRecord {
                epoch: 0,
                loss: 1.5,
                kl: 0.5,
                recon: 1.0,
                penalty: 0.0,
            }],
        };
        assert_eq!(log.to_csv(), "epoch,loss,kl,recon,penalty\n0,1.5,0.5,1,0\n");
    }

    proptest! {
        #[test]
        fn penalty_is_nonnegative_and_zero_only_at_anchor(
            vals in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..5.0), 1..12),
            lambda in 0.0f64..1e6,
        ) {
            let reference: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let params: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let fisher: Vec<f64> = vals.iter().map(|v| v.2).collect();
            let ewc = EwcState::new(reference.clone(), fisher.clone(), lambda).unwrap();
            prop_assert!(ewc.penalty(&params).unwrap() >= 0.0);
            prop_assert_eq!(ewc.penalty(&reference).unwrap(), 0.0);
            let moved = vals.iter().any(|v| v.2 > 0.0 && v.0 != v.1);
            if lambda > 0.0 {
                prop_assert_eq!(ewc.displacement(&params).unwrap() > 0.0, moved);
            }
        }
    }
}
