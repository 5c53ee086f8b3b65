//! Downstream MLP classifier: relu hiddens, linear logits, Adam.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::baselines::{ldam_margins, loss_on, LossKind};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::nn::{Activation, Mlp};
use crate::optim::{minibatches, Adam, OptimConfig};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Rows scored per forward pass at evaluation time.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierLoss {
    CrossEntropy,
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Ldam {
        #[serde(default = "default_margin")]
        max_margin: f64,
        #[serde(default)]
        true_class_only: bool,
    },
}

fn default_gamma() -> f64 {
    1.0
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub loss: ClassifierLoss,
    /// Per-class multipliers on the per-sample loss.
    pub class_weights: Option<Vec<f64>>,
    pub optim: OptimConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![256, 128],
            loss: ClassifierLoss::CrossEntropy,
            class_weights: None,
            optim: OptimConfig::default(),
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("classifier.hidden must list positive layer sizes".into()));
        }
        match self.loss {
            ClassifierLoss::Focal { gamma } if !(gamma >= 0.0) => {
                return Err(Error::Config("classifier.loss.gamma must be non-negative".into()))
            }
            ClassifierLoss::Ldam { max_margin, .. } if !(max_margin >= 0.0) => {
                return Err(Error::Config("classifier.loss.max_margin must be non-negative".into()))
            }
            _ => {}
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config("classifier.class_weights must be positive".into()));
            }
        }
        self.optim.validate()
    }

    fn resolve_loss(&self, counts: &[usize]) -> Result<LossKind> {
        Ok(match &self.loss {
            ClassifierLoss::CrossEntropy => LossKind::CrossEntropy,
            ClassifierLoss::Focal { gamma } => LossKind::Focal { gamma: *gamma },
            ClassifierLoss::Ldam { max_margin, true_class_only } => LossKind::Ldam {
                margins: ldam_margins(counts, *max_margin)?,
                true_class_only: *true_class_only,
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    store: ParamStore,
    mlp: Mlp,
    num_classes: usize,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl Classifier {
    pub fn new(input_dim: usize, num_classes: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "classifier", &dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(Classifier { store, mlp, num_classes, epoch_losses: Vec::new() })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mlp.in_dim() {
            return Err(Error::Shape(format!("classifier expects {} features, got {}", self.mlp.in_dim(), x.cols())));
        }
        let mut out = Vec::with_capacity(x.rows() * self.num_classes);
        let all: Vec<usize> = (0..x.rows()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let g = Graph::new();
            let v = self.mlp.forward(&g, &self.store, g.constant(x.select_rows(chunk)))?;
            out.extend_from_slice(v.value().data());
        }
        Tensor::matrix(x.rows(), self.num_classes, out)
    }

    /// Argmax per row; ties go to the lower class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn train_classifier(train: &LabeledDataset, cfg: &ClassifierConfig, rng: &mut Rng) -> Result<Classifier> {
    cfg.validate()?;
    let counts = train.class_counts();
    let k = train.num_classes();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Data("classifier training needs at least two classes present".into()));
    }
    if let Some(w) = &cfg.class_weights {
        if w.len() != k {
            return Err(Error::Config(format!("classifier.class_weights has {} entries for {k} classes", w.len())));
        }
    }
    let loss_kind = cfg.resolve_loss(&counts)?;
    let mut clf = Classifier::new(train.dim(), k, &cfg.hidden, rng)?;
    let mut adam = Adam::new(&clf.store, &cfg.optim);
    let labels = train.labels();
    for epoch in 0..cfg.optim.epochs {
        let lr = cfg.optim.lr_at(epoch);
        let mut total = 0.0;
        for idx in minibatches(train.len(), cfg.optim.batch_size, rng)? {
            let x = train.features().select_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            clf.store.zero_grad();
            let g = Graph::new();
            let logits = clf.mlp.forward(&g, &clf.store, g.constant(x))?;
            let loss = loss_on(&g, &loss_kind, logits, &y, cfg.class_weights.as_deref())?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("classifier loss is {value} in epoch {epoch}")));
            }
            g.backward(loss)?.accumulate_into(&mut clf.store);
            adam.step(&mut clf.store, lr)?;
            total += value * idx.len() as f64;
        }
        clf.epoch_losses.push(total / train.len() as f64);
    }
    Ok(clf)
}

pub fn evaluate(clf: &Classifier, test: &LabeledDataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    if test.num_classes() != clf.num_classes() {
        return Err(Error::Config(format!(
            "classifier has {} classes, test set {}",
            clf.num_classes(),
            test.num_classes()
        )));
    }
    let predicted = clf.predict(test.features())?;
    EvalReport::from_predictions(test.labels(), &predicted, test.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussians;
    use crate::rng::seeded;

    fn quick(epochs: usize) -> ClassifierConfig {
        ClassifierConfig {
            hidden: vec![16],
            optim: OptimConfig { epochs, batch_size: 32, learning_rate: 1e-2, ..OptimConfig::default() },
            ..ClassifierConfig::default()
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn separable_blobs_fit() {
        for seed in 0..3 {
            let data = synth_gaussians(200, 200, 6.0, &mut seeded(seed)).unwrap();
            let clf = train_classifier(&data, &quick(50), &mut seeded(seed + 10)).unwrap();
            let acc = evaluate(&clf, &data).unwrap().metrics.b_acc;
            assert!(acc >= 0.99, "seed {seed}: {acc}");
        }
    }

    #[test]
    fn uniform_weights_match_unweighted_and_runs_repeat() {
        let data = synth_gaussians(60, 20, 2.0, &mut seeded(1)).unwrap();
        let plain = train_classifier(&data, &quick(3), &mut seeded(4)).unwrap();
        let again = train_classifier(&data, &quick(3), &mut seeded(4)).unwrap();
        let weighted_cfg = ClassifierConfig { class_weights: Some(vec![1.0, 1.0]), ..quick(3) };
        let weighted = train_classifier(&data, &weighted_cfg, &mut seeded(4)).unwrap();
        assert_eq!(plain.store().flat_values(), again.store().flat_values());
        assert_eq!(plain.store().flat_values(), weighted.store().flat_values());
    }

    #[test]
    fn single_class_is_data_error() {
        let x = Tensor::from_rows(&[vec![0.1], vec![0.2]]).unwrap();
        let data = LabeledDataset::new(x, vec![1, 1], 2, crate::data::Normalization::UnitInterval).unwrap();
        assert!(matches!(train_classifier(&data, &quick(1), &mut seeded(0)), Err(Error::Data(_))));
    }

    #[test]
    fn every_loss_trains() {
        let data = synth_gaussians(80, 20, 3.0, &mut seeded(2)).unwrap();
        for loss in [
            ClassifierLoss::Focal { gamma: 1.0 },
            ClassifierLoss::Ldam { max_margin: 0.5, true_class_only: false },
        ] {
            let cfg = ClassifierConfig { loss, ..quick(5) };
            let clf = train_classifier(&data, &cfg, &mut seeded(0)).unwrap();
            assert!(clf.epoch_losses.last().unwrap() < &clf.epoch_losses[0]);
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ClassifierConfig { loss: ClassifierLoss::Ldam { max_margin: 0.3, true_class_only: true }, ..Default::default() };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ClassifierConfig>(&s).unwrap(), cfg);
        let parsed: ClassifierConfig = serde_json::from_str(r#"{"loss":{"kind":"focal"}}"#).unwrap();
        assert_eq!(parsed.loss, ClassifierLoss::Focal { gamma: 1.0 });
    }
}
