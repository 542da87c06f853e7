//! Binary-relevance baseline: one logistic regression per label over
//! binary uni/bi/tri-gram presence features of the whole report.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{prepare_report, LabelSpace, Report};
use crate::error::{Error, Result};
use crate::metrics::Codeset;
use crate::numcore::{sigmoid, AdamConfig, AdamState, ParamSet, ParamView};
use crate::training::{check_nonzero, check_positive};

pub const MAX_NGRAM: usize = 3;
pub const DECISION_THRESHOLD: f64 = 0.5;

/// All distinct n-grams (1 ≤ n ≤ `max_n`) of one token segment, words
/// joined by a single space.
pub fn segment_ngrams(tokens: &[String], max_n: usize, out: &mut BTreeSet<String>) {
    for n in 1..=max_n {
        for w in tokens.windows(n) {
            out.insert(w.join(" "));
        }
    }
}

/// N-grams of a report. Sentences and the reason-for-visit text are
/// separate segments, so no n-gram spans a boundary.
pub fn report_ngrams(report: &Report, include_r4v: bool) -> BTreeSet<String> {
    let prepared = prepare_report(report);
    let mut out = BTreeSet::new();
    for s in prepared.all_sentence_words() {
        segment_ngrams(&s, MAX_NGRAM, &mut out);
    }
    if include_r4v {
        segment_ngrams(&prepared.r4v, MAX_NGRAM, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramVocabulary {
    /// Feature id → n-gram, sorted.
    grams: Vec<String>,
    index: HashMap<String, usize>,
    pub min_df: usize,
    pub include_r4v: bool,
}

impl NgramVocabulary {
    pub fn new(mut grams: Vec<String>, min_df: usize, include_r4v: bool) -> Self {
        grams.sort();
        grams.dedup();
        let index = grams.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        NgramVocabulary {
            grams,
            index,
            min_df,
            include_r4v,
        }
    }

    /// Keeps n-grams occurring in at least `min_df` training reports.
    pub fn fit(train: &[Report], min_df: usize, include_r4v: bool) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for r in train {
            for g in report_ngrams(r, include_r4v) {
                *df.entry(g).or_default() += 1;
            }
        }
        let grams = df
            .into_iter()
            .filter(|(_, c)| *c >= min_df)
            .map(|(g, _)| g)
            .collect();
        Self::new(grams, min_df, include_r4v)
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn grams(&self) -> &[String] {
        &self.grams
    }

    pub fn id(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }
}

/// Sorted ids of the vocabulary n-grams present in the report.
pub fn extract_ngrams(report: &Report, vocab: &NgramVocabulary) -> Vec<usize> {
    let mut ids: Vec<usize> = report_ngrams(report, vocab.include_r4v)
        .iter()
        .filter_map(|g| vocab.id(g))
        .collect();
    ids.sort_unstable();
    ids
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrConfig {
    pub min_df: usize,
    pub l2: f64,
    /// Upper bound on full-batch updates.
    pub epochs: usize,
    pub lr: f64,
    /// Training stops once no gradient coordinate exceeds this.
    pub tolerance: f64,
    pub include_r4v: bool,
    pub seed: u64,
}

impl Default for BrConfig {
    fn default() -> Self {
        BrConfig {
            min_df: 2,
            l2: 1e-4,
            epochs: 2000,
            lr: 0.1,
            tolerance: 1e-5,
            include_r4v: true,
            seed: 0,
        }
    }
}

impl BrConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonzero("baseline.min_df", self.min_df)?;
        check_nonzero("baseline.epochs", self.epochs)?;
        check_positive("baseline.lr", self.lr)?;
        check_positive("baseline.tolerance", self.tolerance)?;
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::config(format!(
                "baseline.l2 must be non-negative, got {}",
                self.l2
            )));
        }
        Ok(())
    }
}

/// Weights and bias of one label's classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelWeights {
    pub w: Vec<f64>,
    pub b: f64,
}

impl ParamSet for LabelWeights {
    fn views(&self) -> Vec<ParamView<'_>> {
        vec![
            ParamView {
                name: "w".into(),
                shape: vec![self.w.len()],
                values: &self.w,
            },
            ParamView {
                name: "b".into(),
                shape: vec![1],
                values: std::slice::from_ref(&self.b),
            },
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, std::slice::from_mut(&mut self.b)]
    }
}

impl LabelWeights {
    pub fn zeros(n: usize) -> Self {
        LabelWeights {
            w: vec![0.0; n],
            b: 0.0,
        }
    }

    pub fn score(&self, features: &[usize]) -> f64 {
        sigmoid(self.b + features.iter().map(|&f| self.w[f]).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrModel {
    pub vocab: NgramVocabulary,
    pub labels: LabelSpace,
    /// One classifier per label, in label-space order.
    pub classifiers: Vec<LabelWeights>,
    pub threshold: f64,
    /// Labels with no positive training report; they are never predicted.
    pub absent: Vec<String>,
}

impl BrModel {
    pub fn scores(&self, report: &Report) -> Vec<f64> {
        let x = extract_ngrams(report, &self.vocab);
        self.classifiers.iter().map(|c| c.score(&x)).collect()
    }
}

/// Codeset of every label whose score is at least the threshold.
pub fn predict_br(report: &Report, model: &BrModel) -> Codeset {
    model
        .scores(report)
        .into_iter()
        .enumerate()
        .filter(|(k, s)| *s >= model.threshold && !model.absent.iter().any(|a| a == model.labels.code(*k)))
        .map(|(k, _)| model.labels.code(k).to_string())
        .collect()
}

/// Mean logistic loss plus `l2/2 · ‖w‖²` (the bias is not penalized).
pub fn br_loss(clf: &LabelWeights, xs: &[Vec<usize>], ys: &[bool], l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = clf.b + x.iter().map(|&f| clf.w[f]).sum::<f64>();
        // log(1 + e^z) - y z, stable in both tails
        total += z.max(0.0) + (-z.abs()).exp().ln_1p() - if y { z } else { 0.0 };
    }
    total / xs.len() as f64 + 0.5 * l2 * clf.w.iter().map(|w| w * w).sum::<f64>()
}

pub fn br_gradient(clf: &LabelWeights, xs: &[Vec<usize>], ys: &[bool], l2: f64, grad: &mut LabelWeights) {
    grad.zero();
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let d = (clf.score(x) - f64::from(u8::from(y))) / n;
        grad.b += d;
        for &f in x {
            grad.w[f] += d;
        }
    }
    for (g, w) in grad.w.iter_mut().zip(&clf.w) {
        *g += l2 * w;
    }
}

fn train_label(xs: &[Vec<usize>], ys: &[bool], dim: usize, config: &BrConfig) -> Result<LabelWeights> {
    let mut clf = LabelWeights::zeros(dim);
    let mut grad = LabelWeights::zeros(dim);
    let mut adam = AdamState::new(
        &clf,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    for _ in 0..config.epochs {
        br_gradient(&clf, xs, ys, config.l2, &mut grad);
        let worst = grad.w.iter().fold(grad.b.abs(), |m, g| m.max(g.abs()));
        if worst <= config.tolerance {
            break;
        }
        adam.update(&mut clf, &grad)?;
    }
    clf.quantize_f32();
    Ok(clf)
}

/// Trains one independent classifier per label. Weights start at zero and
/// updates are full-batch, so the result does not depend on the seed or on
/// the order in which labels are trained.
pub fn train_br(train: &[Report], labels: &LabelSpace, config: &BrConfig) -> Result<BrModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::data("cannot train the baseline on an empty dataset"));
    }
    if labels.is_empty() {
        return Err(Error::data("cannot train the baseline with an empty label space"));
    }
    let vocab = NgramVocabulary::fit(train, config.min_df, config.include_r4v);
    let xs: Vec<Vec<usize>> = train.iter().map(|r| extract_ngrams(r, &vocab)).collect();
    let sets: Vec<Codeset> = train.iter().map(|r| r.codeset()).collect();
    let mut classifiers = Vec::with_capacity(labels.len());
    let mut absent = Vec::new();
    for code in labels.codes() {
        let ys: Vec<bool> = sets.iter().map(|s| s.contains(code)).collect();
        if !ys.iter().any(|&y| y) {
            warn!("label {code} has no positive training report; the baseline will never predict it");
            absent.push(code.clone());
            classifiers.push(LabelWeights::zeros(vocab.len()));
            continue;
        }
        classifiers.push(train_label(&xs, &ys, vocab.len(), config)?);
    }
    Ok(BrModel {
        vocab,
        labels: labels.clone(),
        classifiers,
        threshold: DECISION_THRESHOLD,
        absent,
    })
}
