//! Tabular CSV ingestion and the dataset CSV convention.
//!
//! Input tables have a header row, comma delimiters and `.` decimals. The
//! label column may hold integers or arbitrary strings. Saved datasets use
//! the header `f0,f1,...,f{d-1},label` with integer labels and shortest
//! round-trip float formatting, so reloading is exact.

use std::collections::BTreeSet;
use std::path::Path;

use super::{LabeledDataset, Normalization};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::rng::{shuffle, Rng};
use crate::tensor::Tensor;

/// A CSV file held as strings, header included.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = ::csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(::csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("no column named {name:?} in {:?}", self.header)))
    }

    /// Splits into numeric feature rows and raw label strings. Columns in
    /// `drop` are skipped. Row numbers in errors are 1-based data rows.
    pub fn numeric(&self, label_column: &str, drop: &[String]) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
        let label_idx = self.column_index(label_column)?;
        let mut keep = Vec::new();
        for name in drop {
            self.column_index(name)?;
        }
        for (j, h) in self.header.iter().enumerate() {
            if j != label_idx && !drop.contains(h) {
                keep.push(j);
            }
        }
        let mut features = Vec::with_capacity(self.rows.len());
        let mut labels = Vec::with_capacity(self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            let mut out = Vec::with_capacity(keep.len());
            for &j in &keep {
                let cell = &row[j];
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: self.header[j].clone(),
                    reason: format!("{cell:?} is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: self.header[j].clone(),
                        reason: format!("{cell:?} is not finite"),
                    });
                }
                out.push(v);
            }
            features.push(out);
            labels.push(row[label_idx].clone());
        }
        Ok((features, labels))
    }
}

fn csv_error(path: &Path, e: ::csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Maps raw label strings to `0..K`. Integer labels sort numerically,
/// anything else lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn fit(labels: &[String]) -> Self {
        let set: BTreeSet<&String> = labels.iter().collect();
        let mut names: Vec<String> = set.into_iter().cloned().collect();
        if names.iter().all(|n| n.parse::<i64>().is_ok()) {
            names.sort_by_key(|n| n.parse::<i64>().expect("checked integer"));
        }
        LabelMap { names }
    }

    pub fn encode(&self, label: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::Data(format!("label {label:?} was not seen in training data")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Per-column scaling. Columns with a negative value are divided by
/// `max |x|` into `[-1, 1]`; non-negative columns by `max x` into `[0, 1]`;
/// constant columns become 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    divisor: Vec<f64>,
    signed: Vec<bool>,
    constant: Vec<bool>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut divisor = vec![0.0_f64; d];
        let mut signed = vec![false; d];
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for row in rows {
            if row.len() != d {
                return Err(Error::Shape(format!("ragged rows: {} vs {d}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                divisor[j] = divisor[j].max(v.abs());
                signed[j] |= v < 0.0;
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let constant = lo.iter().zip(&hi).map(|(l, h)| l == h).collect();
        Ok(FeatureScaler {
            divisor,
            signed,
            constant,
        })
    }

    /// `SignedUnit` when any column is signed.
    pub fn normalization(&self) -> Normalization {
        if self.signed.iter().any(|&s| s) {
            Normalization::SignedUnit
        } else {
            Normalization::UnitInterval
        }
    }

    /// Scales rows with the fitted statistics. Values from other splits
    /// that land outside the fitted range are clamped to the column bounds.
    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let d = self.divisor.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Shape(format!("row width {} but scaler fitted on {d}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                let lo = if self.signed[j] { -1.0 } else { 0.0 };
                let scaled = if self.constant[j] || self.divisor[j] == 0.0 {
                    0.0
                } else {
                    (v / self.divisor[j]).clamp(lo, 1.0)
                };
                data.push(scaled);
            }
        }
        Tensor::matrix(rows.len(), d, data)
    }
}

/// Per-class shuffled split; each class with at least two rows puts at
/// least one row on each side.
pub fn stratified_split(labels: &[usize], test_fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} not in [0, 1)")));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        shuffle(rng, &mut idx);
        let n = idx.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if test_fraction > 0.0 && n >= 2 {
            n_test = n_test.clamp(1, n - 1);
        }
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Holds out exactly `per_class` rows of every class for testing.
pub fn balanced_holdout_split(labels: &[usize], per_class: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() <= per_class {
            return Err(Error::Data(format!(
                "class {c} has {} rows, cannot hold out {per_class} and keep any for training",
                idx.len()
            )));
        }
        shuffle(rng, &mut idx);
        test.extend_from_slice(&idx[..per_class]);
        train.extend_from_slice(&idx[per_class..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// How a tabular file is divided into train and test rows.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TabularSplit {
    /// Per-class fraction held out.
    Stratified { test_fraction: f64 },
    /// The same number of rows held out from every class.
    BalancedHoldout { per_class: usize },
}

impl Default for TabularSplit {
    fn default() -> Self {
        TabularSplit::Stratified { test_fraction: 0.2 }
    }
}

impl TabularSplit {
    pub fn split(&self, labels: &[usize], rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
        match *self {
            TabularSplit::Stratified { test_fraction } => stratified_split(labels, test_fraction, rng),
            TabularSplit::BalancedHoldout { per_class } => balanced_holdout_split(labels, per_class, rng),
        }
    }
}

/// Loads a tabular CSV and returns `(train, test)`. Scaling is fitted on
/// the training split only. A zero test fraction yields an empty test set.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    drop: &[String],
    split: &TabularSplit,
    rng: &mut Rng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let table = RawTable::read(path)?;
    let (rows, raw_labels) = table.numeric(label_column, drop)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    let map = LabelMap::fit(&raw_labels);
    let labels = raw_labels
        .iter()
        .map(|l| map.encode(l))
        .collect::<Result<Vec<_>>>()?;
    let (tr, te) = split.split(&labels, rng)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    let (tr_rows, te_rows) = (pick(&tr), pick(&te));
    let scaler = FeatureScaler::fit(&tr_rows)?;
    let norm = scaler.normalization();
    let build = |rows: &[Vec<f64>], idx: &[usize]| -> Result<LabeledDataset> {
        let features = if rows.is_empty() {
            Tensor::zeros(&[0, scaler.divisor.len()])
        } else {
            scaler.transform(rows)?
        };
        LabeledDataset::new(features, idx.iter().map(|&i| labels[i]).collect(), map.len(), norm)?
            .with_class_names(map.names().to_vec())
    };
    Ok((build(&tr_rows, &tr)?, build(&te_rows, &te)?))
}

/// Writes `f0..f{d-1},label`, one row per sample.
pub fn save_dataset_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.labels()[i].to_string());
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    atomic_write(path, &bytes)
}

/// Reads the format written by [`save_dataset_csv`]. The class count is
/// `num_classes` when given, else `max label + 1`.
pub fn load_dataset_csv(path: &Path, normalization: Normalization, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let table = RawTable::read(path)?;
    let (rows, raw) = table.numeric("label", &[])?;
    let labels = raw
        .iter()
        .enumerate()
        .map(|(r, l)| {
            l.parse::<usize>().map_err(|_| Error::Parse {
                row: r + 1,
                column: "label".into(),
                reason: format!("{l:?} is not a class index"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let d = table.header.len() - 1;
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    LabeledDataset::new(Tensor::matrix(labels.len(), d, data)?, labels, k, normalization)
}
