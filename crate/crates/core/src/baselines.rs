//! Classical re-balancing: random oversampling, SMOTE, inverse-frequency
//! and class-balanced weights, focal loss and LDAM.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::rng::{index, uniform, Rng};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logs in the scalar focal
/// helper.
pub const FOCAL_LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub smote_k: usize,
    pub focal_gamma: f64,
    pub ldam_max_margin: f64,
    /// Subtract the margin only from the true-class logit.
    pub ldam_true_class_only: bool,
    pub cbrw_beta: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            smote_k: 5,
            focal_gamma: 1.0,
            ldam_max_margin: 0.5,
            ldam_true_class_only: false,
            cbrw_beta: 0.9999,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smote_k == 0 {
            return Err(Error::Config("baselines.smote_k must be at least 1".into()));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("baselines.focal_gamma must be non-negative".into()));
        }
        if !(self.ldam_max_margin >= 0.0) {
            return Err(Error::Config("baselines.ldam_max_margin must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.cbrw_beta) {
            return Err(Error::Config("baselines.cbrw_beta must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn check_nonempty_classes(counts: &[usize]) -> Result<()> {
    match counts.iter().position(|&c| c == 0) {
        Some(k) => Err(Error::Data(format!("class {k} has no rows"))),
        None => Ok(()),
    }
}

/// Duplicates uniformly drawn rows of each smaller class until every class
/// has as many rows as the largest. Originals come first, unchanged.
pub fn ros_oversample(data: &LabeledDataset, rng: &mut Rng) -> Result<LabeledDataset> {
    let counts = data.class_counts();
    check_nonempty_classes(&counts)?;
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut picks = Vec::new();
    let mut labels = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let members = data.indices_of(k);
        for _ in n..target {
            picks.push(members[index(rng, members.len())]);
            labels.push(k);
        }
    }
    data.append_rows(&data.features().select_rows(&picks), &labels)
}

/// Where one SMOTE row came from: `row = x[source] + u·(x[neighbor] − x[source])`.
/// Indices refer to the input dataset; `synthetic_index` to the output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoteRecord {
    pub synthetic_index: usize,
    pub source_index: usize,
    pub neighbor_index: usize,
    pub u: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nearest members of `members` to member `at` (itself excluded),
/// by Euclidean distance with ties broken toward the lower row index.
pub fn nearest_neighbors(data: &LabeledDataset, members: &[usize], at: usize, k: usize) -> Vec<usize> {
    let x = data.row(at);
    let mut cand: Vec<(f64, usize)> = members
        .iter()
        .filter(|&&j| j != at)
        .map(|&j| (sq_dist(x, data.row(j)), j))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(k).map(|(_, j)| j).collect()
}

/// SMOTE: each synthetic row interpolates a uniformly chosen class member
/// toward one of its `k` nearest same-class neighbours with `u ~ U[0,1]`.
/// `k` is clipped to `class size − 1`. A class with a single row falls
/// back to duplication (recorded with `u = 0`).
pub fn smote_oversample(data: &LabeledDataset, k: usize, rng: &mut Rng) -> Result<(LabeledDataset, Vec<SmoteRecord>)> {
    if k == 0 {
        return Err(Error::Config("smote k must be at least 1".into()));
    }
    let counts = data.class_counts();
    check_nonempty_classes(&counts)?;
    let target = counts.iter().copied().max().unwrap_or(0);
    let d = data.dim();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut records = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        if n == target {
            continue;
        }
        let members = data.indices_of(c);
        if n == 1 {
            log::warn!("class {c} has a single row; SMOTE falls back to duplication");
        }
        let kk = k.min(n.saturating_sub(1));
        let mut neighbor_cache: Vec<Option<Vec<usize>>> = vec![None; members.len()];
        for _ in n..target {
            let pick = index(rng, members.len());
            let src = members[pick];
            let (nb, u) = if kk == 0 {
                (src, 0.0)
            } else {
                let nn = neighbor_cache[pick].get_or_insert_with(|| nearest_neighbors(data, &members, src, kk));
                let nb = nn[index(rng, nn.len())];
                (nb, uniform(rng, 0.0, 1.0))
            };
            let (xs, xn) = (data.row(src), data.row(nb));
            rows.extend((0..d).map(|j| xs[j] + u * (xn[j] - xs[j])));
            records.push(SmoteRecord {
                synthetic_index: data.len() + labels.len(),
                source_index: src,
                neighbor_index: nb,
                u,
            });
            labels.push(c);
        }
    }
    let synth = Tensor::matrix(labels.len(), d, rows)?;
    Ok((data.append_rows(&synth, &labels)?, records))
}

/// Writes `synthetic_row_index,source_index,neighbor_index,u`.
pub fn write_smote_provenance(path: &Path, records: &[SmoteRecord]) -> Result<()> {
    let mut out = String::from("synthetic_row_index,source_index,neighbor_index,u\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.synthetic_index, r.source_index, r.neighbor_index, r.u));
    }
    atomic_write(path, out.as_bytes())
}

/// Per-class loss weights normalized to mean 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    /// Effective sample numbers, for class-balanced weights.
    pub effective_numbers: Option<Vec<f64>>,
}

fn mean_one(raw: Vec<f64>) -> Vec<f64> {
    // Equal weights are returned as exact ones so weighting is a no-op.
    if raw.iter().all(|&w| w == raw[0]) {
        return vec![1.0; raw.len()];
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// `w_k ∝ 1/N_k`.
pub fn rw_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::Data("no classes to weight".into()));
    }
    check_nonempty_classes(counts)?;
    Ok(ClassWeights {
        weights: mean_one(counts.iter().map(|&n| 1.0 / n as f64).collect()),
        effective_numbers: None,
    })
}

/// `E = (1 − β^N) / (1 − β)`.
pub fn effective_number(n: usize, beta: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    // 1 − β^N = −expm1(N ln β), accurate when β is close to 1.
    -(n as f64 * beta.ln()).exp_m1() / (1.0 - beta)
}

/// `w_k ∝ 1/E_k`.
pub fn cbrw_weights(counts: &[usize], beta: f64) -> Result<ClassWeights> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!("cbrw beta {beta} must lie in [0, 1)")));
    }
    if counts.is_empty() {
        return Err(Error::Data("no classes to weight".into()));
    }
    check_nonempty_classes(counts)?;
    let e: Vec<f64> = counts.iter().map(|&n| effective_number(n, beta)).collect();
    Ok(ClassWeights {
        weights: mean_one(e.iter().map(|v| 1.0 / v).collect()),
        effective_numbers: Some(e),
    })
}

/// `Δ_k = C / n_k^{1/4}` with `C` chosen so the largest margin is
/// `max_margin`.
pub fn ldam_margins(counts: &[usize], max_margin: f64) -> Result<Vec<f64>> {
    check_nonempty_classes(counts)?;
    let q: Vec<f64> = counts.iter().map(|&n| (n as f64).powf(-0.25)).collect();
    let top = q.iter().copied().fold(0.0, f64::max);
    Ok(q.iter().map(|v| max_margin * v / top).collect())
}

/// Loss applied to classifier logits.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    CrossEntropy,
    Focal { gamma: f64 },
    Ldam { margins: Vec<f64>, true_class_only: bool },
}

fn weight_rows<'g>(g: &'g Graph, per_row: Var<'g>, labels: &[usize], weights: Option<&[f64]>) -> Result<Var<'g>> {
    match weights {
        None => per_row.mean(),
        Some(w) => {
            let wr: Vec<f64> = labels.iter().map(|&l| w[l]).collect();
            per_row.mul(g.constant(Tensor::vector(wr)))?.mean()
        }
    }
}

/// Batch-mean loss of `logits` (`B×K`). When `weights` are given each row
/// is scaled by its true class's weight.
pub fn loss_on<'g>(
    g: &'g Graph,
    kind: &LossKind,
    logits: Var<'g>,
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!("logits {shape:?} for {} labels", labels.len())));
    }
    let k = shape[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Shape(format!("label {bad} outside {k} logits")));
    }
    if let Some(w) = weights {
        if w.len() != k {
            return Err(Error::Shape(format!("{} class weights for {k} classes", w.len())));
        }
    }
    let nll = match kind {
        LossKind::CrossEntropy => logits.log_softmax_rows()?.pick_per_row(labels)?.neg()?,
        LossKind::Focal { gamma } => {
            let log_p = logits.log_softmax_rows()?.pick_per_row(labels)?;
            if *gamma == 0.0 {
                log_p.neg()?
            } else {
                let factor = log_p.exp()?.neg()?.add_scalar(1.0)?.clamp(FOCAL_LOG_FLOOR, 1.0)?.powf(*gamma)?;
                factor.mul(log_p)?.neg()?
            }
        }
        LossKind::Ldam { margins, true_class_only } => {
            if margins.len() != k {
                return Err(Error::Shape(format!("{} margins for {k} classes", margins.len())));
            }
            let shift = if *true_class_only {
                let mut m = Tensor::zeros(&[labels.len(), k]);
                for (i, &l) in labels.iter().enumerate() {
                    m.data_mut()[i * k + l] = margins[l];
                }
                m
            } else {
                Tensor::matrix(labels.len(), k, margins.repeat(labels.len()))?
            };
            logits
                .sub(g.constant(shift))?
                .log_softmax_rows()?
                .pick_per_row(labels)?
                .neg()?
        }
    };
    weight_rows(g, nll, labels, weights)
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    crate::autodiff::log_sum_exp_slice(logits) - logits[label]
}

/// `−(1 − h)^γ · log h` for the true-class probability `h`, with `h`
/// floored at [`FOCAL_LOG_FLOOR`] inside the log.
pub fn focal_loss(probs: &[f64], label: usize, gamma: f64) -> f64 {
    let h = probs[label];
    let factor = if gamma == 0.0 { 1.0 } else { (1.0 - h).max(0.0).powf(gamma) };
    -factor * h.max(FOCAL_LOG_FLOOR).ln()
}

/// Scalar LDAM loss on one row of logits.
pub fn ldam_loss(logits: &[f64], label: usize, counts: &[usize], max_margin: f64, true_class_only: bool) -> Result<f64> {
    let m = ldam_margins(counts, max_margin)?;
    let adj: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(c, &z)| if !true_class_only || c == label { z - m[c] } else { z })
        .collect();
    Ok(cross_entropy(&adj, label))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = crate::autodiff::log_sum_exp_slice(logits);
    logits.iter().map(|z| (z - lse).exp()).collect()
}
