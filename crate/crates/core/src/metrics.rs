//! Precision/recall/F1 under every averaging mode used for evaluation,
//! subset accuracy, and the JSON metric blocks written by `evaluate`.
//!
//! Zero-division convention: a precision or recall whose denominator is
//! zero is 0, and F1 of `P = R = 0` is 0.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Codeset = BTreeSet<String>;

/// Paired predicted and gold codesets, one pair per instance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    instances: Vec<(Codeset, Codeset)>,
}

impl PredictionSet {
    pub fn new(instances: Vec<(Codeset, Codeset)>) -> Result<Self> {
        if let Some(i) = instances.iter().position(|(_, g)| g.is_empty()) {
            return Err(Error::invalid(format!("instance {i} has an empty gold codeset")));
        }
        Ok(PredictionSet { instances })
    }

    /// Single-label instances (multi-class evaluation).
    pub fn from_labels<S: AsRef<str>>(predicted: &[S], gold: &[S]) -> Result<Self> {
        if predicted.len() != gold.len() {
            return Err(Error::invalid("predicted and gold label lists differ in length"));
        }
        let pairs = predicted
            .iter()
            .zip(gold)
            .map(|(p, g)| {
                (
                    std::iter::once(p.as_ref().to_string()).collect(),
                    std::iter::once(g.as_ref().to_string()).collect(),
                )
            })
            .collect();
        Self::new(pairs)
    }

    pub fn instances(&self) -> &[(Codeset, Codeset)] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn require_non_empty(&self) -> Result<()> {
        if self.instances.is_empty() {
            Err(Error::invalid("metrics need at least one instance"))
        } else {
            Ok(())
        }
    }

    /// Every code seen in either the predictions or the gold sets, sorted.
    pub fn labels(&self) -> Vec<String> {
        let mut all = BTreeSet::new();
        for (p, g) in &self.instances {
            all.extend(p.iter().cloned());
            all.extend(g.iter().cloned());
        }
        all.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    Micro,
    Macro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceMode {
    /// Per-label scores averaged with gold-support weights.
    SupportWeighted,
    /// Per-sample set overlap scores averaged over instances.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-label confusion counts and scores.
pub fn per_label(set: &PredictionSet) -> BTreeMap<String, LabelStats> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for label in set.labels() {
        counts.insert(label, (0, 0, 0));
    }
    for (pred, gold) in set.instances() {
        for l in pred.intersection(gold) {
            counts.get_mut(l).unwrap().0 += 1;
        }
        for l in pred.difference(gold) {
            counts.get_mut(l).unwrap().1 += 1;
        }
        for l in gold.difference(pred) {
            counts.get_mut(l).unwrap().2 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(l, (tp, fp, fn_))| {
            let s = Prf::from_counts(tp, fp, fn_);
            (
                l,
                LabelStats {
                    tp,
                    fp,
                    fn_,
                    support: tp + fn_,
                    precision: s.precision,
                    recall: s.recall,
                    f1: s.f1,
                },
            )
        })
        .collect()
}

pub fn prf(set: &PredictionSet, mode: Average) -> Result<Prf> {
    set.require_non_empty()?;
    let stats = per_label(set);
    Ok(match mode {
        Average::Micro => {
            let (tp, fp, fn_) = stats
                .values()
                .fold((0, 0, 0), |(a, b, c), s| (a + s.tp, b + s.fp, c + s.fn_));
            Prf::from_counts(tp, fp, fn_)
        }
        Average::Macro => {
            let n = stats.len().max(1) as f64;
            Prf {
                precision: stats.values().map(|s| s.precision).sum::<f64>() / n,
                recall: stats.values().map(|s| s.recall).sum::<f64>() / n,
                f1: stats.values().map(|s| s.f1).sum::<f64>() / n,
            }
        }
        Average::Weighted => support_weighted(&stats),
    })
}

fn support_weighted(stats: &BTreeMap<String, LabelStats>) -> Prf {
    let total: usize = stats.values().map(|s| s.support).sum();
    if total == 0 {
        return Prf {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let w = |f: fn(&LabelStats) -> f64| {
        stats.values().map(|s| s.support as f64 * f(s)).sum::<f64>() / total as f64
    };
    Prf {
        precision: w(|s| s.precision),
        recall: w(|s| s.recall),
        f1: w(|s| s.f1),
    }
}

/// Fraction of instances whose predicted set equals the gold set.
pub fn subset_accuracy(set: &PredictionSet) -> Result<f64> {
    set.require_non_empty()?;
    let hits = set.instances().iter().filter(|(p, g)| p == g).count();
    Ok(hits as f64 / set.len() as f64)
}

/// Instance-level scores. `SupportWeighted` scores each label over set
/// membership and averages with support weights; `PerSample` averages the
/// per-instance set overlap scores.
pub fn instance_prf(set: &PredictionSet, mode: InstanceMode) -> Result<Prf> {
    set.require_non_empty()?;
    match mode {
        InstanceMode::SupportWeighted => Ok(support_weighted(&per_label(set))),
        InstanceMode::PerSample => {
            let n = set.len() as f64;
            let mut acc = (0.0, 0.0, 0.0);
            for (p, g) in set.instances() {
                let inter = p.intersection(g).count();
                acc.0 += ratio(inter, p.len());
                acc.1 += ratio(inter, g.len());
                acc.2 += ratio(2 * inter, p.len() + g.len());
            }
            Ok(Prf {
                precision: acc.0 / n,
                recall: acc.1 / n,
                f1: acc.2 / n,
            })
        }
    }
}

/// Multi-class metric block (one predicted and one gold label per
/// instance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub instances: usize,
    pub accuracy: f64,
    pub micro: Prf,
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub weighted: Prf,
}

/// Multi-label metric block for end-to-end codeset prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelMetrics {
    pub instances: usize,
    pub subset_accuracy: f64,
    pub micro: Prf,
    pub instance: Prf,
    pub instance_per_sample: Prf,
    #[serde(rename = "macro")]
    pub macro_: Prf,
    pub weighted: Prf,
}

pub fn multiclass_metrics(set: &PredictionSet) -> Result<MulticlassMetrics> {
    if let Some(i) = set
        .instances()
        .iter()
        .position(|(p, g)| p.len() != 1 || g.len() != 1)
    {
        return Err(Error::invalid(format!(
            "multi-class evaluation needs exactly one predicted and one gold label (instance {i})"
        )));
    }
    let micro = prf(set, Average::Micro)?;
    Ok(MulticlassMetrics {
        instances: set.len(),
        accuracy: subset_accuracy(set)?,
        micro,
        macro_: prf(set, Average::Macro)?,
        weighted: prf(set, Average::Weighted)?,
    })
}

pub fn multilabel_metrics(set: &PredictionSet) -> Result<MultilabelMetrics> {
    Ok(MultilabelMetrics {
        instances: set.len(),
        subset_accuracy: subset_accuracy(set)?,
        micro: prf(set, Average::Micro)?,
        instance: instance_prf(set, InstanceMode::SupportWeighted)?,
        instance_per_sample: instance_prf(set, InstanceMode::PerSample)?,
        macro_: prf(set, Average::Macro)?,
        weighted: prf(set, Average::Weighted)?,
    })
}
