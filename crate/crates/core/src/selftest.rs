//! Built-in verification suite: finite-difference gradient checks for
//! every layer and every model variant, and brute-force metric oracles.
//!
//! Faults can be injected to confirm that a broken gradient or metric is
//! reported by name.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::annotation::{cohens_kappa, Annotation, AnnotationSet};
use crate::classifier::{
    classify_ids, classifier_gradient, classifier_objective, ClassifierOutput, ClassifierParams, EncodedRecord,
    LossConfig, Variant,
};
use crate::error::{Error, Result};
use crate::metrics::{instance_prf, prf, subset_accuracy, Average, InstanceMode, PredictionSet};
use crate::numcore::{
    grad_check, grad_check_worst, layer_backward, layer_forward, Layer, Linear, LstmCell, ParamSet, Tensor2,
};
use crate::tagger::{tagger_gradient, tagger_objective, EncodedReport, TaggerParams};
use crate::training::Trainable;

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;
pub const METRIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Scales the attention-layer gradient of the classifier.
    AttentionBackward,
    /// Scales the recurrent-weight gradient of the tagger.
    TaggerBackward,
    /// Perturbs the micro-F1 value handed to the metric oracle.
    MicroF1,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention-backward" => Ok(Fault::AttentionBackward),
            "tagger-backward" => Ok(Fault::TaggerBackward),
            "micro-f1" => Ok(Fault::MicroF1),
            _ => Err(Error::config(format!(
                "unknown fault {s:?} (attention-backward, tagger-backward, micro-f1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed error (gradient relative error or metric deviation).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tolerance {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
    pub seconds: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    pub seeds: u64,
    pub metric_instances: usize,
    pub fault: Option<Fault>,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        SelftestOptions {
            seeds: 20,
            metric_instances: 200,
            fault: None,
        }
    }
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestReport {
    let started = Instant::now();
    let mut checks = Vec::new();
    checks.extend(check_layer_gradients(opts.seeds));
    checks.push(check_tagger_gradients(opts.seeds, opts.fault));
    for v in Variant::ALL {
        checks.push(check_classifier_gradients(v, opts.seeds, opts.fault));
    }
    checks.extend(check_metric_oracles(opts.metric_instances, 7, opts.fault));
    SelftestReport {
        checks,
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Worst gradient disagreement of one randomized case.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub error: f64,
    /// Parameter name and flat offset, e.g. `classifier.att.w[3]`.
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
}

fn locate<P: ParamSet>(params: &P, index: usize) -> String {
    let mut offset = 0;
    for v in params.views() {
        if index < offset + v.values.len() {
            return format!("{}[{}]", v.name, index - offset);
        }
        offset += v.values.len();
    }
    format!("#{index}")
}

fn summarize(name: String, results: Vec<(u64, Result<GradCase>)>, tolerance: f64) -> CheckResult {
    let mut worst: Option<(u64, GradCase)> = None;
    let mut errors = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(c) => {
                if worst.as_ref().is_none_or(|(_, w)| c.error > w.error || c.error.is_nan()) {
                    worst = Some((seed, c));
                }
            }
            Err(err) => errors.push(format!("seed {seed}: {err}")),
        }
    }
    let value = worst.as_ref().map_or(0.0, |(_, c)| c.error);
    let passed = errors.is_empty() && value < tolerance;
    let detail = if !errors.is_empty() {
        errors.join("; ")
    } else if let Some((seed, c)) = worst {
        if c.coordinate.is_empty() {
            format!("(seed {seed})")
        } else {
            format!(
                "(seed {seed}, {}: analytic {:.6e}, numeric {:.6e})",
                c.coordinate, c.analytic, c.numeric
            )
        }
    } else {
        String::new()
    };
    CheckResult {
        name,
        passed,
        worst: value,
        tolerance,
        detail,
    }
}

fn plain(error: f64) -> GradCase {
    GradCase {
        error,
        coordinate: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Checks each layer of the uniform layer interface with the loss
/// `Σ_j r_j · y_j` for random `r`.
pub fn check_layer_gradients(seeds: u64) -> Vec<CheckResult> {
    let names = [
        "linear", "tanh", "sigmoid", "softmax", "lstm", "embedding", "concat", "mean",
        "weighted-sum",
    ];
    names
        .iter()
        .map(|&name| {
            let results = (0..seeds)
                .map(|s| (s, layer_case(name, s).map(plain)))
                .collect();
            summarize(format!("gradient/layer/{name}"), results, GRAD_TOLERANCE)
        })
        .collect()
}

fn layer_case(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(1));
    let din = rng.random_range(1..=4);
    let dout = rng.random_range(1..=4);
    let t = rng.random_range(1..=4);

    match name {
        "linear" => {
            let lin = Linear::init(din, dout, &mut rng);
            let x = vec![random_vec(&mut rng, din, 1.0)];
            param_and_input_check(&lin, x, &mut rng, |p| Layer::Linear(p))
        }
        "lstm" => {
            let cell = LstmCell::init(din, dout, &mut rng);
            let xs = (0..t).map(|_| random_vec(&mut rng, din, 1.0)).collect();
            param_and_input_check(&cell, xs, &mut rng, |p| Layer::Lstm(p))
        }
        "embedding" => {
            let rows = rng.random_range(2..=5);
            let table = Tensor2::uniform(rows, din, 0.5, &mut rng);
            let ids: Vec<f64> = (0..t).map(|_| rng.random_range(0..rows) as f64).collect();
            let r: Vec<Vec<f64>> = (0..t).map(|_| random_vec(&mut rng, din, 1.0)).collect();
            let (_, cache) = layer_forward(Layer::Embedding(&table), std::slice::from_ref(&ids))?;
            let g = layer_backward(Layer::Embedding(&table), Some(&cache), &r)?;
            let flat = table.as_slice().to_vec();
            grad_check(
                |p| {
                    let tab = Tensor2::from_vec(rows, din, p.to_vec())?;
                    let (y, _) = layer_forward(Layer::Embedding(&tab), std::slice::from_ref(&ids))?;
                    Ok(contract(&y, &r))
                },
                &flat,
                &g.params[0],
                FD_EPS,
            )
        }
        _ => {
            let layer = match name {
                "tanh" => Layer::Tanh,
                "sigmoid" => Layer::Sigmoid,
                "softmax" => Layer::Softmax,
                "concat" => Layer::Concat,
                "mean" => Layer::Mean,
                _ => Layer::WeightedSum,
            };
            let inputs: Vec<Vec<f64>> = match layer {
                Layer::Concat => (0..t)
                    .map(|_| {
                        let n = rng.random_range(1..=3);
                        random_vec(&mut rng, n, 1.0)
                    })
                    .collect(),
                Layer::Mean => (0..t).map(|_| random_vec(&mut rng, din, 1.0)).collect(),
                Layer::WeightedSum => {
                    let mut v = vec![random_vec(&mut rng, t, 1.0)];
                    v.extend((0..t).map(|_| random_vec(&mut rng, din, 1.0)));
                    v
                }
                _ => vec![random_vec(&mut rng, din, 2.0)],
            };
            input_check(layer, inputs, &mut rng)
        }
    }
}

fn contract(y: &[Vec<f64>], r: &[Vec<f64>]) -> f64 {
    y.iter()
        .zip(r)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn random_upstream(y: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    y.iter().map(|v| random_vec(rng, v.len(), 1.0)).collect()
}

fn flatten(xs: &[Vec<f64>]) -> Vec<f64> {
    xs.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], like: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(like.len());
    let mut at = 0;
    for v in like {
        out.push(flat[at..at + v.len()].to_vec());
        at += v.len();
    }
    out
}

fn input_check(layer: Layer<'_>, inputs: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (y, cache) = layer_forward(layer, &inputs)?;
    let r = random_upstream(&y, rng);
    let g = layer_backward(layer, Some(&cache), &r)?;
    grad_check(
        |p| Ok(contract(&layer_forward(layer, &unflatten(p, &inputs))?.0, &r)),
        &flatten(&inputs),
        &flatten(&g.inputs),
        FD_EPS,
    )
}

fn param_and_input_check<P>(
    params: &P,
    inputs: Vec<Vec<f64>>,
    rng: &mut ChaCha8Rng,
    layer: for<'a> fn(&'a P) -> Layer<'a>,
) -> Result<f64>
where
    P: ParamSet + Clone,
{
    let (y, cache) = layer_forward(layer(params), &inputs)?;
    let r = random_upstream(&y, rng);
    let g = layer_backward(layer(params), Some(&cache), &r)?;
    let e_in = grad_check(
        |p| Ok(contract(&layer_forward(layer(params), &unflatten(p, &inputs))?.0, &r)),
        &flatten(&inputs),
        &flatten(&g.inputs),
        FD_EPS,
    )?;
    let e_p = grad_check(
        |p| {
            let mut q = params.clone();
            q.assign_flat(p)?;
            Ok(contract(&layer_forward(layer(&q), &inputs)?.0, &r))
        },
        &params.flatten(),
        &flatten(&g.params),
        FD_EPS,
    )?;
    Ok(e_in.max(e_p))
}

// Grad-check instances use O(1) parameters. At the training init scale
// some recurrent coordinates have gradients near 1e-9, where central
// differences are dominated by roundoff of the loss itself.
fn scramble<P: ParamSet>(p: &mut P, rng: &mut ChaCha8Rng) {
    for s in p.slices_mut() {
        s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

fn random_table(rng: &mut ChaCha8Rng, vocab: usize, d: usize) -> Tensor2 {
    let mut t = Tensor2::uniform(vocab, d, 1.0, rng);
    t.row_mut(0).iter_mut().for_each(|v| *v = 0.0);
    t
}

// Sequence lengths for grad-check instances. Lengths 0 and 1 exercise the
// degenerate paths (their recurrent-weight gradients vanish exactly);
// otherwise sequences are long enough that recurrent-weight gradients are
// sums over several steps. With two or three steps such a gradient is a
// single product of small factors and lands below the roundoff floor of
// central differences about once per hundred instances.
fn seq_len(rng: &mut ChaCha8Rng, allow_empty: bool) -> usize {
    match rng.random_range(0..4) {
        0 => usize::from(!allow_empty || rng.random_bool(0.5)),
        _ => rng.random_range(4..=6),
    }
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..vocab)).collect()
}

/// Gradient check of the tagger objective, embedding matrix included.
pub fn tagger_case(seed: u64, fault: Option<Fault>) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    let d = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=4);
    let vocab = 7;
    let mut model = TaggerParams::init(d, hidden, &mut rng);
    scramble(&mut model, &mut rng);
    let table = random_table(&mut rng, vocab, d);
    let reports: Vec<EncodedReport> = (0..2)
        .map(|_| {
            let m = seq_len(&mut rng, false);
            let sentences = (0..m)
                .map(|_| {
                    let n = rng.random_range(0..=4);
                    random_ids(&mut rng, vocab, n)
                })
                .collect();
            let r4v_len = seq_len(&mut rng, true);
            let r4v = random_ids(&mut rng, vocab, r4v_len);
            let labels = (0..m).map(|_| rng.random_range(0..=1u8)).collect();
            EncodedReport {
                sentences,
                r4v,
                labels,
            }
        })
        .collect();
    let batch: Vec<&EncodedReport> = reports.iter().collect();
    let weights = [rng.random_range(0.5..2.0), rng.random_range(1.0..5.0)];
    let state = Trainable {
        model,
        embedding: Some(table),
    };
    let mut grad = state.zeros_like();
    tagger_gradient(
        &state.model,
        state.embedding.as_ref().unwrap(),
        &batch,
        weights,
        &mut grad,
    )?;
    if fault == Some(Fault::TaggerBackward) {
        grad.model.lstm.w_hh.as_mut_slice().iter_mut().for_each(|g| *g *= 1.5);
    }
    let w = grad_check_worst(
        |p| {
            let mut s = state.clone();
            s.assign_flat(p)?;
            tagger_objective(&s.model, s.embedding.as_ref().unwrap(), &batch, weights)
        },
        &state.flatten(),
        &grad.flatten(),
        FD_EPS,
    )?;
    Ok(GradCase {
        error: w.error,
        coordinate: locate(&state, w.index),
        analytic: w.analytic,
        numeric: w.numeric,
    })
}

pub fn check_tagger_gradients(seeds: u64, fault: Option<Fault>) -> CheckResult {
    let results = (0..seeds).map(|s| (s, tagger_case(s, fault))).collect();
    summarize("gradient/tagger".into(), results, GRAD_TOLERANCE)
}

/// Gradient check of the joint classifier objective (λ = 100 for the
/// supervised variant), embedding matrix included.
pub fn classifier_case(variant: Variant, seed: u64, fault: Option<Fault>) -> Result<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2000));
    let d = rng.random_range(2..=4);
    let hidden = rng.random_range(2..=4);
    let att = rng.random_range(2..=3);
    let labels = rng.random_range(2..=4);
    let vocab = 8;
    let mut model = ClassifierParams::init(variant, d, hidden, att, labels, &mut rng);
    scramble(&mut model, &mut rng);
    let table = random_table(&mut rng, vocab, d);
    let records: Vec<EncodedRecord> = (0..2)
        .map(|i| {
            let t = if i == 0 { 4 } else { seq_len(&mut rng, false) };
            let tokens = random_ids(&mut rng, vocab, t);
            let mut attention: Vec<f64> = (0..t).map(|_| f64::from(rng.random_range(0..=1u8))).collect();
            attention[rng.random_range(0..t)] = 1.0;
            let r4v_len = seq_len(&mut rng, true);
            EncodedRecord {
                tokens,
                attention,
                r4v: random_ids(&mut rng, vocab, r4v_len),
                label: rng.random_range(0..labels),
            }
        })
        .collect();
    let batch: Vec<&EncodedRecord> = records.iter().collect();
    let loss = LossConfig {
        lambda: 100.0,
        normalize_target: false,
    };
    let state = Trainable {
        model,
        embedding: Some(table),
    };
    let mut grad = state.zeros_like();
    classifier_gradient(
        &state.model,
        state.embedding.as_ref().unwrap(),
        &batch,
        loss,
        &mut grad,
    )?;
    if fault == Some(Fault::AttentionBackward) {
        if let Some(a) = grad.model.att.as_mut() {
            a.w.as_mut_slice().iter_mut().for_each(|g| *g *= 1.5);
        }
    }
    let base = record_outputs(&state, &batch)?;
    let lambda = loss.effective_lambda(&state.model);
    // the centered form must describe the production objective
    let direct: f64 = batch
        .iter()
        .zip(&base)
        .map(|(r, o)| {
            let ja = o.attention.as_ref().map_or(0.0, |a| {
                a.iter().zip(&r.attention).map(|(x, t)| (x - t) * (x - t)).sum()
            });
            -o.probs[r.label].ln() + lambda * ja
        })
        .sum();
    let objective = classifier_objective(&state.model, state.embedding.as_ref().unwrap(), &batch, loss)?;
    if (direct - objective).abs() > 1e-10 * objective.abs().max(1.0) {
        return Err(Error::Numeric(format!(
            "objective {objective} disagrees with its output-level form {direct}"
        )));
    }
    let w = grad_check_worst(
        |p| {
            let mut s = state.clone();
            s.assign_flat(p)?;
            Ok(centered(&batch, &record_outputs(&s, &batch)?, &base, lambda))
        },
        &state.flatten(),
        &grad.flatten(),
        FD_EPS,
    )?;
    Ok(GradCase {
        error: w.error,
        coordinate: locate(&state, w.index),
        analytic: w.analytic,
        numeric: w.numeric,
    })
}

fn record_outputs(
    s: &Trainable<ClassifierParams>,
    batch: &[&EncodedRecord],
) -> Result<Vec<ClassifierOutput>> {
    let table = s.embedding.as_ref().expect("grad checks fine-tune embeddings");
    batch
        .iter()
        .map(|r| classify_ids(&s.model, table, &r.tokens, &r.r4v))
        .collect()
}

// Joint objective minus its value at the base point, accumulated term by
// term. Terms a perturbation does not reach cancel exactly, so the
// finite-difference quotient only carries the rounding of terms that move.
fn centered(
    batch: &[&EncodedRecord],
    out: &[ClassifierOutput],
    base: &[ClassifierOutput],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for ((rec, o), b) in batch.iter().zip(out).zip(base) {
        let (p, p0) = (o.probs[rec.label], b.probs[rec.label]);
        total -= ((p - p0) / p0).ln_1p();
        if let (Some(a), Some(a0)) = (&o.attention, &b.attention) {
            for ((x, x0), t) in a.iter().zip(a0).zip(&rec.attention) {
                total += lambda * (x - x0) * (x + x0 - 2.0 * t);
            }
        }
    }
    total
}

pub fn check_classifier_gradients(variant: Variant, seeds: u64, fault: Option<Fault>) -> CheckResult {
    let results = (0..seeds)
        .map(|s| (s, classifier_case(variant, s, fault)))
        .collect();
    summarize(format!("gradient/classifier/{variant}"), results, GRAD_TOLERANCE)
}

/// Random multi-label prediction set with at most 6 labels and 20
/// instances.
pub fn random_prediction_set(rng: &mut ChaCha8Rng) -> PredictionSet {
    let labels: Vec<String> = (0..rng.random_range(1..=6)).map(|k| format!("L{k}")).collect();
    let n = rng.random_range(1..=20);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut gold: BTreeSet<String> = labels
            .iter()
            .filter(|_| rng.random_bool(0.35))
            .cloned()
            .collect();
        if gold.is_empty() {
            gold.insert(labels[rng.random_range(0..labels.len())].clone());
        }
        let pred = labels
            .iter()
            .filter(|_| rng.random_bool(0.35))
            .cloned()
            .collect();
        pairs.push((pred, gold));
    }
    PredictionSet::new(pairs).expect("gold sets are non-empty")
}

/// Reference metrics computed by enumerating a per-label 0/1 matrix.
mod oracle {
    use super::*;

    pub struct Scores {
        pub micro: [f64; 3],
        pub macro_: [f64; 3],
        pub weighted: [f64; 3],
        pub per_sample: [f64; 3],
        pub subset: f64,
    }

    fn safe(n: f64, d: f64) -> f64 {
        if d == 0.0 {
            0.0
        } else {
            n / d
        }
    }

    fn f1(p: f64, r: f64) -> f64 {
        safe(2.0 * p * r, p + r)
    }

    pub fn scores(set: &PredictionSet) -> Scores {
        let inst = set.instances();
        let labels: Vec<String> = set.labels();
        let y: Vec<Vec<bool>> = inst
            .iter()
            .map(|(_, g)| labels.iter().map(|l| g.contains(l)).collect())
            .collect();
        let yhat: Vec<Vec<bool>> = inst
            .iter()
            .map(|(p, _)| labels.iter().map(|l| p.contains(l)).collect())
            .collect();
        let mut per = Vec::new();
        let (mut tp_all, mut fp_all, mut fn_all) = (0.0, 0.0, 0.0);
        for j in 0..labels.len() {
            let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
            for i in 0..inst.len() {
                match (yhat[i][j], y[i][j]) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            let p = safe(tp, tp + fp);
            let r = safe(tp, tp + fn_);
            per.push((p, r, f1(p, r), tp + fn_));
        }
        let l = per.len() as f64;
        let support: f64 = per.iter().map(|x| x.3).sum();
        let avg = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| per.iter().map(f).sum::<f64>() / l;
        let wavg = |f: &dyn Fn(&(f64, f64, f64, f64)) -> f64| {
            safe(per.iter().map(|x| x.3 * f(x)).sum::<f64>(), support)
        };
        let mp = safe(tp_all, tp_all + fp_all);
        let mr = safe(tp_all, tp_all + fn_all);
        let mut ps = [0.0; 3];
        let mut exact = 0.0;
        for i in 0..inst.len() {
            let inter = (0..labels.len()).filter(|&j| y[i][j] && yhat[i][j]).count() as f64;
            let np = yhat[i].iter().filter(|&&b| b).count() as f64;
            let ng = y[i].iter().filter(|&&b| b).count() as f64;
            ps[0] += safe(inter, np);
            ps[1] += safe(inter, ng);
            ps[2] += safe(2.0 * inter, np + ng);
            if y[i] == yhat[i] {
                exact += 1.0;
            }
        }
        let n = inst.len() as f64;
        Scores {
            micro: [mp, mr, f1(mp, mr)],
            macro_: [avg(&|x| x.0), avg(&|x| x.1), avg(&|x| x.2)],
            weighted: [wavg(&|x| x.0), wavg(&|x| x.1), wavg(&|x| x.2)],
            per_sample: [ps[0] / n, ps[1] / n, ps[2] / n],
            subset: exact / n,
        }
    }

    /// Kappa from an explicit 2×2 contingency table.
    pub fn kappa(a: &AnnotationSet, b: &AnnotationSet) -> f64 {
        let codes: BTreeSet<&String> = a
            .values()
            .chain(b.values())
            .flatten()
            .map(|x| &x.code)
            .collect();
        let mut table = [[0.0f64; 2]; 2];
        for (doc, sa) in a {
            for c in &codes {
                let x = sa.iter().any(|s| &s.code == *c) as usize;
                let y = b[doc].iter().any(|s| &s.code == *c) as usize;
                table[x][y] += 1.0;
            }
        }
        let n: f64 = table.iter().flatten().sum();
        let po = (table[0][0] + table[1][1]) / n;
        let row1 = (table[1][0] + table[1][1]) / n;
        let col1 = (table[0][1] + table[1][1]) / n;
        let pe = row1 * col1 + (1.0 - row1) * (1.0 - col1);
        if pe == 1.0 {
            1.0
        } else {
            (po - pe) / (1.0 - pe)
        }
    }
}

pub fn random_annotation_pair(rng: &mut ChaCha8Rng) -> (AnnotationSet, AnnotationSet) {
    let docs = rng.random_range(1..=20);
    let codes = rng.random_range(1..=6);
    let mut a = AnnotationSet::new();
    let mut b = AnnotationSet::new();
    for d in 0..docs {
        let pick = |rng: &mut ChaCha8Rng| -> Vec<Annotation> {
            (0..codes)
                .filter(|_| rng.random_bool(0.4))
                .map(|c| Annotation::new(c, c + 1, format!("C{c}")))
                .collect()
        };
        a.insert(format!("d{d}"), pick(rng));
        b.insert(format!("d{d}"), pick(rng));
    }
    // keep at least one code in use
    a.get_mut("d0").unwrap().push(Annotation::new(0, 1, "C0"));
    (a, b)
}

pub fn check_metric_oracles(instances: usize, seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = [
        "micro", "macro", "weighted", "instance", "instance-per-sample", "subset-accuracy",
        "kappa",
    ];
    let mut worst = [0.0f64; 7];
    let mut errors: Vec<String> = Vec::new();
    let mut note = |k: usize, got: Result<f64>, want: f64| match got {
        Ok(v) => worst[k] = worst[k].max((v - want).abs()),
        Err(e) => errors.push(format!("{}: {e}", names[k])),
    };
    for _ in 0..instances {
        let set = random_prediction_set(&mut rng);
        let o = oracle::scores(&set);
        let triples = [
            (0, prf(&set, Average::Micro), o.micro),
            (1, prf(&set, Average::Macro), o.macro_),
            (2, prf(&set, Average::Weighted), o.weighted),
            (3, instance_prf(&set, InstanceMode::SupportWeighted), o.weighted),
            (4, instance_prf(&set, InstanceMode::PerSample), o.per_sample),
        ];
        for (k, got, want) in triples {
            let mut got = got;
            if k == 0 && fault == Some(Fault::MicroF1) {
                got = got.map(|mut g| {
                    g.f1 += 1e-3;
                    g
                });
            }
            match got {
                Ok(g) => {
                    note(k, Ok(g.precision), want[0]);
                    note(k, Ok(g.recall), want[1]);
                    note(k, Ok(g.f1), want[2]);
                }
                Err(e) => note(k, Err(e), 0.0),
            }
        }
        note(5, subset_accuracy(&set), o.subset);
        let (a, b) = random_annotation_pair(&mut rng);
        note(6, cohens_kappa(&a, &b), oracle::kappa(&a, &b));
    }
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let errs: Vec<&String> = errors.iter().filter(|e| e.starts_with(name)).collect();
            CheckResult {
                name: format!("metric/{name}"),
                passed: errs.is_empty() && worst[k] <= METRIC_TOLERANCE,
                worst: worst[k],
                tolerance: METRIC_TOLERANCE,
                detail: if errs.is_empty() {
                    format!("({instances} instances)")
                } else {
                    errs.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ")
                },
            }
        })
        .collect()
}
