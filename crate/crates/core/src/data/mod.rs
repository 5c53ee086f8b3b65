//! Labeled datasets, loaders and imbalance construction.

mod csv;
mod idx;
mod image;
mod imbalance;
mod synth;

use serde::{Deserialize, Serialize};

pub use self::csv::{
    balanced_holdout_split, load_csv, load_dataset_csv, save_dataset_csv, stratified_split, FeatureScaler, LabelMap,
    RawTable, TabularSplit,
};
pub use self::idx::{load_idx, load_idx_images, load_idx_labels, write_idx_images, write_idx_labels};
pub use self::image::{resize_bilinear, resize_dataset, sample_grid_pgm, write_pgm};
pub use self::imbalance::{make_imbalanced, GroupKeep, ImbalanceReport, ImbalanceSpec, KeepRule};
pub use self::synth::{synth_gaussians, two_moons};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "IMBFORGE_DATA_DIR";

/// Resolves `path` against `IMBFORGE_DATA_DIR` when it is relative.
pub fn resolve_data_path(path: &str) -> std::path::PathBuf {
    let p = std::path::PathBuf::from(path);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => std::path::PathBuf::from(dir).join(p),
        None => p,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Every feature lies in `[0, 1]`.
    UnitInterval,
    /// Every feature lies in `[-1, 1]`.
    SignedUnit,
}

impl Normalization {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Normalization::UnitInterval => (0.0, 1.0),
            Normalization::SignedUnit => (-1.0, 1.0),
        }
    }
}

/// Feature matrix with integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    class_names: Option<Vec<String>>,
    normalization: Normalization,
    image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Shape(format!(
                "features must be a matrix, got {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let (lo, hi) = normalization.bounds();
        if let Some(v) = features.data().iter().find(|v| !(**v >= lo && **v <= hi)) {
            return Err(Error::Data(format!(
                "feature value {v} outside [{lo}, {hi}] for {normalization:?} data"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            class_names: None,
            normalization,
            image_shape: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_classes {
            return Err(Error::Data(format!(
                "{} class names for {} classes",
                names.len(),
                self.num_classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.dim() {
            return Err(Error::Shape(format!(
                "image shape {rows}x{cols} does not match feature width {}",
                self.dim()
            )));
        }
        self.image_shape = Some((rows, cols));
        Ok(self)
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows at `indices`, in that order, keeping metadata.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            normalization: self.normalization,
            image_shape: self.image_shape,
        }
    }

    /// All rows of one class.
    pub fn class_subset(&self, class: usize) -> LabeledDataset {
        self.subset(&self.indices_of(class))
    }

    /// Appends `rows` (row-major, `dim` wide) with the given labels.
    pub fn append_rows(&self, rows: &Tensor, labels: &[usize]) -> Result<LabeledDataset> {
        if rows.rows() != labels.len() || (rows.numel() > 0 && rows.cols() != self.dim()) {
            return Err(Error::Shape(format!(
                "cannot append {:?} with {} labels to width {}",
                rows.shape(),
                labels.len(),
                self.dim()
            )));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(rows.data());
        let mut all_labels = self.labels.clone();
        all_labels.extend_from_slice(labels);
        let features = Tensor::matrix(all_labels.len(), self.dim(), data)?;
        let mut out = LabeledDataset::new(features, all_labels, self.num_classes, self.normalization)?;
        out.class_names = self.class_names.clone();
        out.image_shape = self.image_shape;
        Ok(out)
    }

    /// Maps every label through `map` into a dataset with `num_classes` classes.
    pub fn relabel(&self, map: impl Fn(usize) -> usize, num_classes: usize) -> Result<LabeledDataset> {
        let labels = self.labels.iter().map(|&l| map(l)).collect();
        let mut out = LabeledDataset::new(self.features.clone(), labels, num_classes, self.normalization)?;
        out.image_shape = self.image_shape;
        Ok(out)
    }
}
