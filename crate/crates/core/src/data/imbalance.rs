//! Imbalanced training sets built by per-group subsampling.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{sample_without_replacement, Rng};

/// How many rows of a class group survive subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeepRule {
    /// Every class in the group keeps exactly this many rows.
    PerClass(usize),
    /// The group as a whole keeps this many rows, drawn uniformly from the
    /// pooled classes.
    Total(usize),
    /// No subsampling.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupKeep {
    pub classes: Vec<usize>,
    pub keep: KeepRule,
}

/// Which original classes are kept, how many rows each keeps, and how they
/// are relabeled. A binary spec has exactly two groups: the first becomes
/// label 0 (majority), the second label 1 (minority). Otherwise every
/// listed class becomes its own label in listing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub groups: Vec<GroupKeep>,
    #[serde(default)]
    pub binary: bool,
}

/// Realized counts of a constructed training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceReport {
    pub counts: Vec<usize>,
    /// Largest over smallest class count.
    pub rho: f64,
}

impl ImbalanceSpec {
    /// Majority classes 0-4 pooled to 30000 rows, each of 5-9 kept at
    /// `per_minority_class` rows, binary relabel.
    pub fn five_vs_five(per_minority_class: usize) -> Self {
        ImbalanceSpec {
            groups: vec![
                GroupKeep {
                    classes: (0..5).collect(),
                    keep: KeepRule::Total(30_000),
                },
                GroupKeep {
                    classes: (5..10).collect(),
                    keep: KeepRule::PerClass(per_minority_class),
                },
            ],
            binary: true,
        }
    }

    /// 30000 vs 300 (ρ = 100).
    pub fn rho_100() -> Self {
        Self::five_vs_five(60)
    }

    /// 30000 vs 50 (ρ = 600).
    pub fn rho_600() -> Self {
        Self::five_vs_five(10)
    }

    /// Binary 0-4 vs 5-9 with nothing removed.
    pub fn five_vs_five_full() -> Self {
        ImbalanceSpec {
            groups: vec![
                GroupKeep {
                    classes: (0..5).collect(),
                    keep: KeepRule::All,
                },
                GroupKeep {
                    classes: (5..10).collect(),
                    keep: KeepRule::All,
                },
            ],
            binary: true,
        }
    }

    /// Every class of a `k`-class dataset kept unchanged.
    pub fn identity(k: usize) -> Self {
        ImbalanceSpec {
            groups: (0..k)
                .map(|c| GroupKeep {
                    classes: vec![c],
                    keep: KeepRule::All,
                })
                .collect(),
            binary: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.binary && self.groups.len() != 2 {
            return Err(Error::Config(format!(
                "a binary spec needs exactly 2 groups, got {}",
                self.groups.len()
            )));
        }
        let mut seen = Vec::new();
        for g in &self.groups {
            if g.classes.is_empty() {
                return Err(Error::Config("imbalance group lists no classes".into()));
            }
            for &c in &g.classes {
                if seen.contains(&c) {
                    return Err(Error::Config(format!("class {c} appears in two groups")));
                }
                seen.push(c);
            }
        }
        Ok(())
    }

    pub fn num_output_classes(&self) -> usize {
        if self.binary {
            2
        } else {
            self.groups.iter().map(|g| g.classes.len()).sum()
        }
    }

    /// Original class → output label, `None` for classes that are dropped.
    pub fn label_map(&self, num_source_classes: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; num_source_classes];
        let mut next = 0;
        for (gi, g) in self.groups.iter().enumerate() {
            for &c in &g.classes {
                if c < num_source_classes {
                    map[c] = Some(if self.binary { gi } else { next });
                }
                next += 1;
            }
        }
        map
    }

    /// Relabels a test set without subsampling it. Rows of classes the spec
    /// does not mention are dropped.
    pub fn apply_to_test(&self, test: &LabeledDataset) -> Result<LabeledDataset> {
        self.validate()?;
        let map = self.label_map(test.num_classes());
        let keep: Vec<usize> = (0..test.len())
            .filter(|&i| map[test.labels()[i]].is_some())
            .collect();
        let sub = test.subset(&keep);
        let out = sub.relabel(|l| map[l].expect("filtered"), self.num_output_classes())?;
        self.name_classes(out)
    }

    fn name_classes(&self, data: LabeledDataset) -> Result<LabeledDataset> {
        if self.binary {
            data.with_class_names(vec!["majority".into(), "minority".into()])
        } else {
            Ok(data)
        }
    }
}

/// Subsamples each group without replacement, then relabels. Selected rows
/// keep their original relative order and values.
pub fn make_imbalanced(
    data: &LabeledDataset,
    spec: &ImbalanceSpec,
    rng: &mut Rng,
) -> Result<(LabeledDataset, ImbalanceReport)> {
    spec.validate()?;
    let mut selected = Vec::new();
    for g in &spec.groups {
        let pools: Vec<Vec<usize>> = g
            .classes
            .iter()
            .map(|&c| {
                if c >= data.num_classes() {
                    Err(Error::Config(format!(
                        "class {c} not present in a {}-class dataset",
                        data.num_classes()
                    )))
                } else {
                    Ok(data.indices_of(c))
                }
            })
            .collect::<Result<_>>()?;
        match g.keep {
            KeepRule::All => pools.iter().for_each(|p| selected.extend_from_slice(p)),
            KeepRule::PerClass(n) => {
                for (pool, c) in pools.iter().zip(&g.classes) {
                    if n > pool.len() {
                        return Err(Error::Config(format!(
                            "class {c} has {} rows, cannot keep {n}",
                            pool.len()
                        )));
                    }
                    selected.extend(sample_without_replacement(rng, pool.len(), n).into_iter().map(|i| pool[i]));
                }
            }
            KeepRule::Total(n) => {
                let pool: Vec<usize> = pools.concat();
                if n > pool.len() {
                    return Err(Error::Config(format!(
                        "classes {:?} have {} rows together, cannot keep {n}",
                        g.classes,
                        pool.len()
                    )));
                }
                selected.extend(sample_without_replacement(rng, pool.len(), n).into_iter().map(|i| pool[i]));
            }
        }
    }
    selected.sort_unstable();
    let map = spec.label_map(data.num_classes());
    let out = data
        .subset(&selected)
        .relabel(|l| map[l].expect("selected rows belong to listed classes"), spec.num_output_classes())?;
    let out = spec.name_classes(out)?;
    let counts = out.class_counts();
    let min = counts.iter().copied().min().unwrap_or(0);
    let max = counts.iter().copied().max().unwrap_or(0);
    let rho = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    Ok((out, ImbalanceReport { counts, rho }))
}
