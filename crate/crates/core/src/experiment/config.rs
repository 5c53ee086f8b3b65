//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::classifier::ClassifierConfig;
use crate::data::{resolve_data_path, ImbalanceSpec, TabularSplit};
use crate::error::{Error, Result};
use crate::ewc::TrainConfig;
use crate::mgvae::{OutputLikelihood, PriorMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Ros,
    Smote,
    Rw,
    Cbrw,
    Focal,
    Ldam,
    Mgvae,
    VaeAblation,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Erm,
        Method::Ros,
        Method::Smote,
        Method::Rw,
        Method::Cbrw,
        Method::Focal,
        Method::Ldam,
        Method::Mgvae,
        Method::VaeAblation,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Ros => "ros",
            Method::Smote => "smote",
            Method::Rw => "rw",
            Method::Cbrw => "cbrw",
            Method::Focal => "focal",
            Method::Ldam => "ldam",
            Method::Mgvae => "mgvae",
            Method::VaeAblation => "vae_ablation",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown method {tag:?}")))
    }

    /// Methods that train a generative model.
    pub fn is_generative(self) -> bool {
        matches!(self, Method::Mgvae | Method::VaeAblation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two isotropic Gaussians; `param` is the separation of their means.
    Gaussians,
    /// Interleaved half circles; `param` is the jitter scale.
    Moons,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// IDX image files; relative paths resolve against `IMBFORGE_DATA_DIR`.
    Idx {
        train_images: String,
        train_labels: String,
        test_images: String,
        test_labels: String,
    },
    Csv {
        path: String,
        label_column: String,
        #[serde(default)]
        drop_columns: Vec<String>,
        #[serde(default)]
        split: TabularSplit,
    },
    Synthetic {
        generator: SyntheticKind,
        n_major: usize,
        n_minor: usize,
        param: f64,
        /// Balanced test rows per class.
        n_test_per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub source: DatasetSource,
    /// Training-set subsampling; absent means the data is used as loaded.
    #[serde(default)]
    pub imbalance: Option<ImbalanceSpec>,
}

impl DatasetSpec {
    pub fn is_image(&self) -> bool {
        matches!(self.source, DatasetSource::Idx { .. })
    }

    /// Paths this dataset reads, after resolution.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        match &self.source {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => [train_images, train_labels, test_images, test_labels]
                .iter()
                .map(|p| resolve_data_path(p))
                .collect(),
            DatasetSource::Csv { path, .. } => vec![resolve_data_path(path)],
            DatasetSource::Synthetic { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Paper,
    /// Images downsampled to 14x14 and every epoch count halved.
    Small,
}

impl Scale {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "paper" => Ok(Scale::Paper),
            "small" => Ok(Scale::Small),
            _ => Err(Error::Config(format!("unknown scale {tag:?}, expected paper or small"))),
        }
    }
}

/// Side length of images at `Scale::Small`.
pub const SMALL_IMAGE_SIDE: usize = 14;

/// Optional overrides of the architecture picked from the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden: Option<Vec<usize>>,
    pub latent_dim: Option<usize>,
    pub likelihood: Option<OutputLikelihood>,
    pub prior: Option<PriorMode>,
}

/// Size of the PGM sample dumps: `rows` reference images, each followed by
/// `per_row` generated ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub per_row: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { rows: 8, per_row: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub method: Method,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub grid: GridSpec,
    /// Directory written by `pretrain`; generative methods start from it
    /// instead of pretraining inline.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        let at = |section: &str, e: Error| match e {
            Error::Config(m) if m.starts_with(section) => Error::Config(m),
            Error::Config(m) => Error::Config(format!("{section}: {m}")),
            other => other,
        };
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.dataset.name.trim().is_empty() {
            return Err(Error::Config("dataset.name must not be empty".into()));
        }
        if let Some(spec) = &self.dataset.imbalance {
            spec.validate().map_err(|e| at("dataset.imbalance", e))?;
        }
        match &self.dataset.source {
            DatasetSource::Synthetic { n_major, n_minor, n_test_per_class, param, .. } => {
                if *n_major == 0 || *n_minor == 0 || *n_test_per_class == 0 {
                    return Err(Error::Config("dataset.source: synthetic row counts must be positive".into()));
                }
                if !param.is_finite() || *param < 0.0 {
                    return Err(Error::Config("dataset.source.param must be finite and non-negative".into()));
                }
            }
            DatasetSource::Csv { split: TabularSplit::Stratified { test_fraction }, .. }
                if !(0.0..1.0).contains(test_fraction) =>
            {
                return Err(Error::Config("dataset.source.split.test_fraction must lie in [0, 1)".into()));
            }
            _ => {}
        }
        self.classifier.validate().map_err(|e| at("classifier", e))?;
        self.baselines.validate()?;
        if self.method.is_generative() {
            self.train.validate().map_err(|e| at("train", e))?;
            if let Some(h) = &self.model.hidden {
                if h.is_empty() || h.contains(&0) {
                    return Err(Error::Config("model.hidden must list positive layer sizes".into()));
                }
            }
            if self.model.latent_dim == Some(0) {
                return Err(Error::Config("model.latent_dim must be positive".into()));
            }
        }
        if self.grid.rows == 0 || self.grid.per_row == 0 {
            return Err(Error::Config("grid.rows and grid.per_row must be positive".into()));
        }
        Ok(())
    }

    /// The configuration actually run: `Scale::Small` halves every epoch
    /// count (at least one epoch each).
    pub fn effective(&self) -> ExperimentConfig {
        let mut cfg = self.clone();
        if cfg.scale == Scale::Small {
            let half = |n: usize| n.div_ceil(2).max(1);
            cfg.train.pretrain_epochs = half(cfg.train.pretrain_epochs);
            cfg.train.finetune_epochs = half(cfg.train.finetune_epochs);
            cfg.classifier.optim.epochs = half(cfg.classifier.optim.epochs);
        }
        cfg
    }
}

/// Command-line adjustments layered on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub output_dir: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub method: Option<Method>,
    pub lambda: Option<f64>,
    pub disable_pretrain: bool,
    pub disable_ewc: bool,
    pub prior: Option<PriorMode>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = o.clone();
        }
        if let Some(s) = self.scale {
            cfg.scale = s;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(l) = self.lambda {
            cfg.train.lambda = l;
        }
        cfg.train.disable_pretrain |= self.disable_pretrain;
        cfg.train.disable_ewc |= self.disable_ewc;
        if let Some(p) = self.prior {
            cfg.model.prior = Some(p);
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "dataset": {"name": "toy", "source": {"kind": "synthetic", "generator": "gaussians",
                            "n_major": 100, "n_minor": 10, "param": 2.0, "n_test_per_class": 20}},
                "method": "ros"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = synthetic();
        assert_eq!(c.seeds, vec![0, 1, 2]);
        assert_eq!(c.classifier.hidden, vec![256, 128]);
        assert_eq!(c.baselines.smote_k, 5);
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_fields_and_bad_values_are_config_errors() {
        let bad = r#"{"dataset": {"name": "x", "source": {"kind": "synthetic", "generator": "moons",
            "n_major": 1, "n_minor": 1, "param": 0.1, "n_test_per_class": 1}}, "method": "erm", "lamda": 3}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
        let mut c = synthetic();
        c.classifier.optim.learning_rate = -1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("classifier") && msg.contains("learning_rate"), "{msg}");
        let mut c = synthetic();
        c.method = Method::Mgvae;
        c.train.prior_subsample = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn small_scale_halves_epochs() {
        let mut c = synthetic();
        c.scale = Scale::Small;
        c.train.pretrain_epochs = 5;
        let e = c.effective();
        assert_eq!(e.train.pretrain_epochs, 3);
        assert_eq!(e.train.finetune_epochs, 50);
        assert_eq!(e.classifier.optim.epochs, 50);
    }

    #[test]
    fn overrides_apply() {
        let mut c = synthetic();
        Overrides {
            seeds: Some(vec![7]),
            method: Some(Method::Mgvae),
            lambda: Some(5e2),
            disable_ewc: true,
            prior: Some(PriorMode::StandardNormal),
            ..Default::default()
        }
        .apply(&mut c);
        assert_eq!((c.seeds.clone(), c.method, c.train.lambda), (vec![7], Method::Mgvae, 5e2));
        assert!(c.train.disable_ewc && !c.train.disable_pretrain);
        assert_eq!(c.model.prior, Some(PriorMode::StandardNormal));
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_tag(m.tag()).unwrap(), m);
        }
        assert!(Method::from_tag("gan").is_err());
    }
}
