//! Confusion matrices, B-ACC / ACSA / GM, and aggregation over trials.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;

/// Metrics as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub b_acc: f64,
    pub acsa: f64,
    pub gm: f64,
}

impl Metrics {
    pub fn as_percent(&self) -> [f64; 3] {
        [self.b_acc * 100.0, self.acsa * 100.0, self.gm * 100.0]
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; k]; k] }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), predicted.len())));
        }
        let mut m = ConfusionMatrix::zeros(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::Data(format!("label pair ({t}, {p}) outside {k} classes")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Per-class recall; a class with no rows is a data error.
    pub fn recalls(&self) -> Result<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, r)| {
                let n: u64 = r.iter().sum();
                if n == 0 {
                    Err(Error::Data(format!("class {k} is absent from the test set")))
                } else {
                    Ok(r[k] as f64 / n as f64)
                }
            })
            .collect()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let recalls = self.recalls()?;
        let k = recalls.len() as f64;
        let correct: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        let gm = if recalls.contains(&0.0) {
            0.0
        } else {
            (recalls.iter().map(|r| r.ln()).sum::<f64>() / k).exp()
        };
        Ok(Metrics {
            b_acc: correct as f64 / self.total() as f64,
            acsa: recalls.iter().sum::<f64>() / k,
            gm,
        })
    }

    fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let metrics = confusion.metrics()?;
        Ok(EvalReport { confusion, metrics })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        EvalReport::from_confusion(ConfusionMatrix::from_predictions(truth, predicted, k)?)
    }
}

/// Per-trial metrics with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: Vec<Metrics>,
    pub mean: Metrics,
    pub std: Metrics,
    /// Sum of the trials' confusion matrices.
    pub confusion: ConfusionMatrix,
}

/// Mean and `n − 1` standard deviation; values are summed in sorted order
/// so the result does not depend on trial order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

pub fn aggregate_trials(reports: &[EvalReport]) -> Result<TrialSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("aggregation needs at least one report".into()))?;
    let k = first.confusion.num_classes();
    let mut confusion = ConfusionMatrix::zeros(k);
    for r in reports {
        if r.confusion.num_classes() != k {
            return Err(Error::Config(format!(
                "cannot aggregate reports over {k} and {} classes",
                r.confusion.num_classes()
            )));
        }
        confusion.add(&r.confusion);
    }
    let pick = |f: fn(&Metrics) -> f64| mean_std(&reports.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>());
    let (b, bs) = pick(|m| m.b_acc);
    let (a, as_) = pick(|m| m.acsa);
    let (g, gs) = pick(|m| m.gm);
    Ok(TrialSummary {
        trials: reports.iter().map(|r| r.metrics).collect(),
        mean: Metrics { b_acc: b, acsa: a, gm: g },
        std: Metrics { b_acc: bs, acsa: as_, gm: gs },
        confusion,
    })
}

/// One line of the per-seed results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub metrics: Metrics,
}

pub const RESULTS_HEADER: &str = "method,dataset,seed,b_acc,acsa,gm";

/// Per-seed CSV with metrics as percentages.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let [b, a, g] = r.metrics.as_percent();
        let _ = writeln!(out, "{},{},{},{b:.6},{a:.6},{g:.6}", r.method, r.dataset, r.seed);
    }
    out
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    atomic_write(path, results_csv(rows).as_bytes())
}

/// Reads a file written by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: bad value in column {i}", path.display())))
        };
        rows.push(ResultRow {
            method: rec.get(0).unwrap_or_default().to_string(),
            dataset: rec.get(1).unwrap_or_default().to_string(),
            seed: num(2)? as u64,
            metrics: Metrics { b_acc: num(3)? / 100.0, acsa: num(4)? / 100.0, gm: num(5)? / 100.0 },
        });
    }
    Ok(rows)
}

/// One row of an aggregated table: a label (method, or λ for sweeps)
/// and its trial summary.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub summary: TrialSummary,
}

/// Plain-text table of `mean ± std` percentages with one decimal.
pub fn format_table(title: &str, label_header: &str, rows: &[TableRow]) -> String {
    let cell = |m: f64, s: f64| format!("{:.1} ± {:.1}", m * 100.0, s * 100.0);
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            let (m, s) = (&r.summary.mean, &r.summary.std);
            [r.label.clone(), cell(m.b_acc, s.b_acc), cell(m.acsa, s.acsa), cell(m.gm, s.gm)]
        })
        .collect();
    let header = [label_header.to_string(), "B-ACC".into(), "ACSA".into(), "GM".into()];
    let mut widths = header.clone().map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String; 4]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells.iter().zip(widths).skip(1) {
            let pad = w - c.chars().count();
            let _ = write!(s, "  {}{c}", " ".repeat(pad));
        }
        s.trim_end().to_string()
    };
    let mut out = format!("{title}\n{}\n", line(&header));
    let total: usize = widths.iter().sum::<usize>() + 6;
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let m = cm(vec![vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 9]]).metrics().unwrap();
        assert_eq!(m.as_percent(), [100.0, 100.0, 100.0]);
    }

    #[test]
    fn recalls_one_and_quarter() {
        let m = cm(vec![vec![10, 0], vec![3, 1]]).metrics().unwrap();
        assert!((m.acsa * 100.0 - 62.5).abs() < 1e-12);
        assert!((m.gm * 100.0 - 50.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_data_error() {
        assert!(matches!(cm(vec![vec![3, 0], vec![0, 0]]).metrics(), Err(Error::Data(_))));
    }

    #[test]
    fn aggregate_examples() {
        let r = |acc: f64| EvalReport {
            confusion: cm(vec![vec![1, 0], vec![0, 1]]),
            metrics: Metrics { b_acc: acc, acsa: acc, gm: acc },
        };
        let one = aggregate_trials(&[r(0.8)]).unwrap();
        assert_eq!(one.mean.b_acc, 0.8);
        assert_eq!(one.std.b_acc, 0.0);
        let two = aggregate_trials(&[r(0.8), r(0.9)]).unwrap();
        assert!((two.mean.gm - 0.85).abs() < 1e-12);
        assert!((two.std.gm * 100.0 - 7.0710678118654755).abs() < 1e-9);
        assert_eq!(two.confusion.counts(), &[vec![2, 0], vec![0, 2]]);
        let swapped = aggregate_trials(&[r(0.9), r(0.8)]).unwrap();
        assert_eq!((swapped.mean, swapped.std), (two.mean, two.std));
        let three = EvalReport::from_confusion(cm(vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]])).unwrap();
        assert!(matches!(aggregate_trials(&[r(0.8), three]), Err(Error::Config(_))));
    }

    #[test]
    fn csv_round_trip_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rows = vec![ResultRow {
            method: "ros".into(),
            dataset: "synthetic".into(),
            seed: 3,
            metrics: Metrics { b_acc: 0.5, acsa: 0.25, gm: 0.125 },
        }];
        write_results_csv(&p, &rows).unwrap();
        assert_eq!(read_results_csv(&p).unwrap(), rows);
        let s = aggregate_trials(&[EvalReport::from_predictions(&[0, 1], &[0, 0], 2).unwrap()]).unwrap();
        let t = format_table("demo", "method", &[TableRow { label: "erm".into(), summary: s }]);
        assert!(t.contains("erm") && t.contains("50.0 ± 0.0") && t.contains("0.0 ± 0.0"));
    }

    proptest! {
        #[test]
        fn metric_invariants(cells in proptest::collection::vec(0u64..40, 9), diag_boost in 1u64..5) {
            let mut rows: Vec<Vec<u64>> = cells.chunks(3).map(<[u64]>::to_vec).collect();
            for (i, r) in rows.iter_mut().enumerate() { r[i] += diag_boost - 1; if r.iter().sum::<u64>() == 0 { r[i] = 1; } }
            let m = cm(rows.clone());
            let met = m.metrics().unwrap();
            prop_assert!(0.0 <= met.gm && met.gm <= met.acsa + 1e-15 && met.acsa <= 1.0);
            let any_zero = (0..3).any(|i| rows[i][i] == 0);
            prop_assert_eq!(met.gm == 0.0, any_zero);
            let sums = m.row_sums();
            if sums.iter().all(|&s| s == sums[0]) {
                prop_assert!((met.b_acc - met.acsa).abs() < 1e-12);
            }
        }
    }
}
