//! Turning a dataset spec into per-seed train and test sets.

use crate::data::{
    load_csv, load_idx, make_imbalanced, resize_dataset, resolve_data_path, synth_gaussians, two_moons,
    ImbalanceReport, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::rng::derived;

use super::config::{DatasetSource, DatasetSpec, Scale, SyntheticKind, SMALL_IMAGE_SIDE};
use super::streams;

/// A train/test pair ready for one trial.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub report: ImbalanceReport,
}

/// Loaded inputs shared by all seeds of a run. Image files are read once;
/// tabular files are re-split per seed.
#[derive(Debug, Clone)]
pub struct DataSource {
    spec: DatasetSpec,
    scale: Scale,
    images: Option<(LabeledDataset, LabeledDataset)>,
}

impl DataSource {
    /// Reads every input file. Fails before anything is written when a
    /// path is missing or malformed.
    pub fn open(spec: &DatasetSpec, scale: Scale) -> Result<Self> {
        let images = match &spec.source {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(&resolve_data_path(train_images), &resolve_data_path(train_labels))?;
                let test = load_idx(&resolve_data_path(test_images), &resolve_data_path(test_labels))?;
                Some((train, test))
            }
            DatasetSource::Csv { path, .. } => {
                let p = resolve_data_path(path);
                if !p.is_file() {
                    return Err(Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset file not found")));
                }
                None
            }
            DatasetSource::Synthetic { .. } => None,
        };
        Ok(DataSource {
            spec: spec.clone(),
            scale,
            images,
        })
    }

    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    /// Train and test sets for `seed`. Only the training split is
    /// subsampled; the test split is relabeled but otherwise untouched.
    pub fn realize(&self, seed: u64) -> Result<Prepared> {
        let mut rng = derived(seed, streams::DATA);
        let (train, test) = match (&self.spec.source, &self.images) {
            (_, Some((train, test))) => (train.clone(), test.clone()),
            (DatasetSource::Csv { path, label_column, drop_columns, split }, None) => {
                load_csv(&resolve_data_path(path), label_column, drop_columns, split, &mut rng)?
            }
            (DatasetSource::Synthetic { generator, n_major, n_minor, param, n_test_per_class }, None) => {
                let t = *n_test_per_class;
                let all = match generator {
                    SyntheticKind::Gaussians => synth_gaussians(n_major + t, n_minor + t, *param, &mut rng)?,
                    SyntheticKind::Moons => two_moons(n_major + t, n_minor + t, *param, &mut rng)?,
                };
                split_tail(&all, t)
            }
            (DatasetSource::Idx { .. }, None) => unreachable!("image sources are loaded in open"),
        };
        let (train, report) = match &self.spec.imbalance {
            Some(spec) => make_imbalanced(&train, spec, &mut rng)?,
            None => {
                let counts = train.class_counts();
                let rho = rho_of(&counts);
                (train, ImbalanceReport { counts, rho })
            }
        };
        let test = match &self.spec.imbalance {
            Some(spec) => spec.apply_to_test(&test)?,
            None => test,
        };
        let (train, test) = match (self.scale, train.image_shape()) {
            (Scale::Small, Some(_)) => (
                resize_dataset(&train, SMALL_IMAGE_SIDE, SMALL_IMAGE_SIDE)?,
                resize_dataset(&test, SMALL_IMAGE_SIDE, SMALL_IMAGE_SIDE)?,
            ),
            _ => (train, test),
        };
        Ok(Prepared { train, test, report })
    }
}

fn rho_of(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(1) as f64;
    max / min
}

/// The last `per_class` rows of every class become the test set.
fn split_tail(all: &LabeledDataset, per_class: usize) -> (LabeledDataset, LabeledDataset) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..all.num_classes() {
        let idx = all.indices_of(k);
        let cut = idx.len() - per_class.min(idx.len());
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (all.subset(&train), all.subset(&test))
}
