//! Level two: assigns one ICD code to a focus sentence.
//!
//! The sentence runs through an LSTM. Attention variants score each hidden
//! state with `u_t = tanh(W h_t + b)` against the last position,
//! `s_t = u_t · u_T`, and summarize the sentence as `Σ_t softmax(s)_t h_t`.
//! The pooling variant uses `[mean_t h_t, max_t h_t]` instead. The summary,
//! optionally concatenated with the last hidden state of a second LSTM
//! over the reason-for-visit tokens, feeds a softmax classifier.
//!
//! The supervised variant adds `λ Σ_t (α̂_t − α_t)²` to the cross-entropy,
//! pulling the attention toward the annotated tokens.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassifierRecord, LabelSpace};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numcore::{
    concat, dot, softmax, softmax_backward, split, tanh_backward, weighted_sum,
    weighted_sum_backward, AdamConfig, AdamState, Linear, LstmCell, LstmTrace, ParamSet,
    ParamView, Tensor2,
};
use crate::training::{
    check_nonzero, check_positive, epoch_batches, scatter_rows, Trainable,
};

pub const DEFAULT_MAX_TOKENS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    Pooling,
    Vanilla,
    Supervised,
}

impl Encoder {
    pub fn name(self) -> &'static str {
        match self {
            Encoder::Pooling => "pooling",
            Encoder::Vanilla => "vanilla",
            Encoder::Supervised => "supervised",
        }
    }

    pub fn has_attention(self) -> bool {
        self != Encoder::Pooling
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pooling" | "mean-max" => Ok(Encoder::Pooling),
            "vanilla" | "vanilla-attention" => Ok(Encoder::Vanilla),
            "supervised" | "supervised-attention" => Ok(Encoder::Supervised),
            other => Err(Error::config(format!(
                "unknown classifier variant {other:?} (expected pooling, vanilla or supervised)"
            ))),
        }
    }
}

/// Serialized as its display form, e.g. `"supervised+r4v"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub encoder: Encoder,
    pub use_r4v: bool,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::new(Encoder::Pooling, false),
        Variant::new(Encoder::Pooling, true),
        Variant::new(Encoder::Vanilla, false),
        Variant::new(Encoder::Vanilla, true),
        Variant::new(Encoder::Supervised, false),
        Variant::new(Encoder::Supervised, true),
    ];

    pub const fn new(encoder: Encoder, use_r4v: bool) -> Self {
        Variant { encoder, use_r4v }
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::new(Encoder::Supervised, true)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = if self.use_r4v { "+r4v" } else { "" };
        write!(f, "{}{suffix}", self.encoder.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// `supervised`, `vanilla+r4v`, ...
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix("+r4v") {
            Some(enc) => Ok(Variant::new(enc.parse()?, true)),
            None => Ok(Variant::new(s.parse()?, false)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub variant: Variant,
    pub fs: LstmCell,
    pub r4v: Option<LstmCell>,
    pub att: Option<Linear>,
    pub out: Linear,
}

impl ClassifierParams {
    fn build(
        variant: Variant,
        embedding_dim: usize,
        hidden: usize,
        attention: usize,
        labels: usize,
        mut make_lstm: impl FnMut(usize, usize) -> LstmCell,
        mut make_linear: impl FnMut(usize, usize) -> Linear,
    ) -> Self {
        let fs = make_lstm(embedding_dim, hidden);
        let r4v = variant.use_r4v.then(|| make_lstm(embedding_dim, hidden));
        let att = variant
            .encoder
            .has_attention()
            .then(|| make_linear(hidden, attention));
        let summary = if variant.encoder.has_attention() { hidden } else { 2 * hidden };
        let width = summary + if variant.use_r4v { hidden } else { 0 };
        ClassifierParams {
            variant,
            fs,
            r4v,
            att,
            out: make_linear(width, labels),
        }
    }

    pub fn zeros(
        variant: Variant,
        embedding_dim: usize,
        hidden: usize,
        attention: usize,
        labels: usize,
    ) -> Self {
        Self::build(
            variant,
            embedding_dim,
            hidden,
            attention,
            labels,
            LstmCell::zeros,
            Linear::zeros,
        )
    }

    pub fn init<R: rand::Rng + ?Sized>(
        variant: Variant,
        embedding_dim: usize,
        hidden: usize,
        attention: usize,
        labels: usize,
        rng: &mut R,
    ) -> Self {
        // one generator feeds both closures, in construction order
        let rng = std::cell::RefCell::new(rng);
        Self::build(
            variant,
            embedding_dim,
            hidden,
            attention,
            labels,
            |i, h| LstmCell::init(i, h, &mut **rng.borrow_mut()),
            |i, o| Linear::init(i, o, &mut **rng.borrow_mut()),
        )
    }

    pub fn embedding_dim(&self) -> usize {
        self.fs.input_size()
    }

    pub fn hidden(&self) -> usize {
        self.fs.hidden_size()
    }

    pub fn attention_size(&self) -> usize {
        self.att.as_ref().map_or(0, |a| a.output_size())
    }

    pub fn labels(&self) -> usize {
        self.out.output_size()
    }

    /// Width of the classification layer's input.
    pub fn context_width(&self) -> usize {
        self.out.input_size()
    }
}

impl ParamSet for ClassifierParams {
    fn views(&self) -> Vec<ParamView<'_>> {
        let mut v = self.fs.views_prefixed("classifier.fs");
        if let Some(r) = &self.r4v {
            v.extend(r.views_prefixed("classifier.r4v"));
        }
        if let Some(a) = &self.att {
            v.extend(a.views_prefixed("classifier.att"));
        }
        v.extend(self.out.views_prefixed("classifier.out"));
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.fs.slices_mut_inner();
        if let Some(r) = self.r4v.as_mut() {
            v.extend(r.slices_mut_inner());
        }
        if let Some(a) = self.att.as_mut() {
            v.extend(a.slices_mut_inner());
        }
        v.extend(self.out.slices_mut_inner());
        v
    }
}

/// Last hidden state of the r4v LSTM; the zero vector for no tokens.
pub fn encode_r4v<S: AsRef<str>>(
    tokens: &[S],
    lstm: &LstmCell,
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    let xs: Vec<Vec<f64>> = table
        .ids(tokens)
        .iter()
        .map(|&i| table.vector(i).to_vec())
        .collect();
    let trace = lstm.forward_seq(&xs)?;
    Ok(trace
        .last_hidden()
        .map_or_else(|| vec![0.0; lstm.hidden_size()], |h| h.to_vec()))
}

fn attention_projections(hs: &[Vec<f64>], att: &Linear) -> Result<Vec<Vec<f64>>> {
    hs.iter()
        .map(|h| Ok(att.forward(h)?.into_iter().map(f64::tanh).collect()))
        .collect()
}

fn attention_weights(u: &[Vec<f64>]) -> Result<Vec<f64>> {
    let last = u
        .last()
        .ok_or_else(|| Error::invalid("attention over an empty sequence"))?;
    let scores: Vec<f64> = u.iter().map(|ut| dot(ut, last)).collect();
    softmax(&scores)
}

/// Attention distribution over hidden states `h_1..h_T`.
pub fn attend(hs: &[Vec<f64>], att: &Linear) -> Result<Vec<f64>> {
    if hs.is_empty() {
        return Err(Error::invalid("attention over an empty sequence"));
    }
    attention_weights(&attention_projections(hs, att)?)
}

/// `Σ_t (α̂_t − α_t)²`
pub fn attention_loss(predicted: &[f64], target: &[f64]) -> Result<f64> {
    if predicted.len() != target.len() {
        return Err(Error::invalid(format!(
            "attention has {} weights but the target has {}",
            predicted.len(),
            target.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `[mean_t h_t, max_t h_t]`
pub fn mean_max_pool(hs: &[Vec<f64>]) -> Result<Vec<f64>> {
    Ok(pool(hs)?.0)
}

fn pool(hs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<usize>)> {
    let first = hs
        .first()
        .ok_or_else(|| Error::invalid("pooling over an empty sequence"))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    let mut max = first.clone();
    let mut arg = vec![0usize; dim];
    for (t, h) in hs.iter().enumerate() {
        for k in 0..dim {
            mean[k] += h[k];
            if h[k] > max[k] {
                max[k] = h[k];
                arg[k] = t;
            }
        }
    }
    let n = hs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok((concat(&[&mean, &max]), arg))
}

/// `J_c + λ J_a`
pub fn joint_loss(classification: f64, attention: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ must be non-negative, got {lambda}")));
    }
    Ok(classification + lambda * attention)
}

/// A record mapped to ids, truncated to the model's maximum length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub tokens: Vec<usize>,
    pub attention: Vec<f64>,
    pub r4v: Vec<usize>,
    pub label: usize,
}

pub fn encode_records(
    records: &[ClassifierRecord],
    table: &EmbeddingTable,
    labels: &LabelSpace,
    max_tokens: usize,
) -> Result<Vec<EncodedRecord>> {
    let mut out = Vec::with_capacity(records.len());
    let mut unknown = Vec::new();
    let mut truncated = 0usize;
    for (row, r) in records.iter().enumerate() {
        let Some(label) = labels.id(&r.code) else {
            unknown.push(format!("row {row} ({}#{}: {:?})", r.report_id, r.sentence_index, r.code));
            continue;
        };
        if r.tokens.is_empty() {
            return Err(Error::data(format!(
                "row {row} ({}#{}) has no tokens",
                r.report_id, r.sentence_index
            )));
        }
        if r.attention.len() != r.tokens.len() {
            return Err(Error::data(format!(
                "row {row} ({}#{}) has {} attention targets for {} tokens",
                r.report_id,
                r.sentence_index,
                r.attention.len(),
                r.tokens.len()
            )));
        }
        let n = r.tokens.len().min(max_tokens);
        if n < r.tokens.len() {
            truncated += 1;
        }
        out.push(EncodedRecord {
            tokens: table.ids(&r.tokens[..n]),
            attention: r.attention[..n].iter().map(|&a| f64::from(a)).collect(),
            r4v: table.ids(&r.r4v),
            label,
        });
    }
    if !unknown.is_empty() {
        return Err(Error::data(format!(
            "{} record(s) carry codes outside the label space: {}",
            unknown.len(),
            unknown.join(", ")
        )));
    }
    if truncated > 0 {
        log::warn!("{truncated} sentence(s) truncated to {max_tokens} tokens");
    }
    Ok(out)
}

/// Label distribution and, for attention variants, the attention weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOutput {
    pub probs: Vec<f64>,
    pub attention: Option<Vec<f64>>,
}

impl ClassifierOutput {
    /// Most probable label id; ties go to the lower id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

struct Forward {
    fs: LstmTrace,
    hs: Vec<Vec<f64>>,
    r4v: Option<LstmTrace>,
    u: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    pool_arg: Vec<usize>,
    summary_len: usize,
    context: Vec<f64>,
    probs: Vec<f64>,
}

fn gather(ids: &[usize], vectors: &Tensor2) -> Vec<Vec<f64>> {
    ids.iter().map(|&i| vectors.row(i).to_vec()).collect()
}

fn forward(params: &ClassifierParams, vectors: &Tensor2, tokens: &[usize], r4v: &[usize]) -> Result<Forward> {
    if tokens.is_empty() {
        return Err(Error::invalid("cannot classify an empty sentence"));
    }
    if vectors.cols() != params.embedding_dim() {
        return Err(Error::config(format!(
            "classifier expects {}-dimensional embeddings, table has {}",
            params.embedding_dim(),
            vectors.cols()
        )));
    }
    let fs = params.fs.forward_seq(&gather(tokens, vectors))?;
    let hs = fs.hidden_states();
    let (summary, u, alpha, pool_arg) = match &params.att {
        Some(att) => {
            let u = attention_projections(&hs, att)?;
            let alpha = attention_weights(&u)?;
            (weighted_sum(&alpha, &hs), u, alpha, Vec::new())
        }
        None => {
            let (v, arg) = pool(&hs)?;
            (v, Vec::new(), Vec::new(), arg)
        }
    };
    let summary_len = summary.len();
    let (context, r4v_trace) = match &params.r4v {
        Some(cell) => {
            let trace = cell.forward_seq(&gather(r4v, vectors))?;
            let last = trace
                .last_hidden()
                .map_or_else(|| vec![0.0; cell.hidden_size()], |h| h.to_vec());
            (concat(&[&summary, &last]), Some(trace))
        }
        None => (summary, None),
    };
    let probs = softmax(&params.out.forward(&context)?)?;
    Ok(Forward {
        fs,
        hs,
        r4v: r4v_trace,
        u,
        alpha,
        pool_arg,
        summary_len,
        context,
        probs,
    })
}

pub fn classify_ids(
    params: &ClassifierParams,
    vectors: &Tensor2,
    tokens: &[usize],
    r4v: &[usize],
) -> Result<ClassifierOutput> {
    let f = forward(params, vectors, tokens, r4v)?;
    Ok(ClassifierOutput {
        probs: f.probs,
        attention: params.att.is_some().then_some(f.alpha),
    })
}

/// Classifies one tokenized sentence (truncated to `max_tokens`).
pub fn classify<S: AsRef<str>>(
    tokens: &[S],
    r4v: &[S],
    params: &ClassifierParams,
    table: &EmbeddingTable,
    max_tokens: usize,
) -> Result<ClassifierOutput> {
    let n = tokens.len().min(max_tokens);
    classify_ids(params, table.vectors(), &table.ids(&tokens[..n]), &table.ids(r4v))
}

fn target(rec: &EncodedRecord, normalize: bool) -> Vec<f64> {
    let k: f64 = rec.attention.iter().sum();
    if normalize && k > 0.0 {
        rec.attention.iter().map(|a| a / k).collect()
    } else {
        rec.attention.clone()
    }
}

/// Loss settings for the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub normalize_target: bool,
}

impl LossConfig {
    pub fn effective_lambda(&self, params: &ClassifierParams) -> f64 {
        if params.variant.encoder == Encoder::Supervised {
            self.lambda
        } else {
            0.0
        }
    }
}

/// Per-record `(J_c, J_a)`; `J_a` is 0 for the pooling variant.
pub fn record_losses(
    params: &ClassifierParams,
    vectors: &Tensor2,
    rec: &EncodedRecord,
    normalize_target: bool,
) -> Result<(f64, f64)> {
    let f = forward(params, vectors, &rec.tokens, &rec.r4v)?;
    let jc = -f.probs[rec.label].ln();
    let ja = if params.att.is_some() {
        attention_loss(&f.alpha, &target(rec, normalize_target))?
    } else {
        0.0
    };
    Ok((jc, ja))
}

/// Joint objective summed over the batch.
pub fn classifier_objective(
    params: &ClassifierParams,
    vectors: &Tensor2,
    batch: &[&EncodedRecord],
    loss: LossConfig,
) -> Result<f64> {
    let lambda = loss.effective_lambda(params);
    let mut total = 0.0;
    for rec in batch {
        let (jc, ja) = record_losses(params, vectors, rec, loss.normalize_target)?;
        total += joint_loss(jc, ja, lambda)?;
    }
    Ok(total)
}

/// Sums of `J_c` and `J_a` over the batch; gradients of the joint
/// objective are added to `grad`.
pub fn classifier_gradient(
    params: &ClassifierParams,
    vectors: &Tensor2,
    batch: &[&EncodedRecord],
    loss: LossConfig,
    grad: &mut Trainable<ClassifierParams>,
) -> Result<(f64, f64)> {
    let lambda = loss.effective_lambda(params);
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("λ must be non-negative, got {lambda}")));
    }
    let hidden = params.hidden();
    let (mut jc_sum, mut ja_sum) = (0.0, 0.0);
    for rec in batch {
        let f = forward(params, vectors, &rec.tokens, &rec.r4v)?;
        jc_sum += -f.probs[rec.label].ln();

        let mut dz = f.probs.clone();
        dz[rec.label] -= 1.0;
        let dc = params.out.backward(&f.context, &dz, &mut grad.model.out);
        let (d_summary, d_r4v) = if params.r4v.is_some() {
            let mut parts = split(&dc, &[f.summary_len, hidden]);
            let r = parts.pop().unwrap();
            (parts.pop().unwrap(), Some(r))
        } else {
            (dc, None)
        };

        if let (Some(cell), Some(trace), Some(dr)) = (&params.r4v, &f.r4v, d_r4v) {
            if !trace.is_empty() {
                let mut dh = vec![Vec::new(); trace.len()];
                *dh.last_mut().unwrap() = dr;
                let gcell = grad.model.r4v.as_mut().expect("gradient layout matches");
                let dx = cell.backward_seq(trace, &dh, gcell)?;
                if let Some(ge) = grad.embedding.as_mut() {
                    scatter_rows(ge, &rec.r4v, &dx);
                }
            }
        }

        let t_len = f.hs.len();
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hidden]; t_len];
        match &params.att {
            Some(att) => {
                let (mut d_alpha, dvals) = weighted_sum_backward(&f.alpha, &f.hs, &d_summary);
                for (acc, d) in dh.iter_mut().zip(dvals) {
                    acc.iter_mut().zip(d).for_each(|(a, b)| *a += b);
                }
                let tgt = target(rec, loss.normalize_target);
                ja_sum += attention_loss(&f.alpha, &tgt)?;
                if lambda > 0.0 {
                    for (d, (a, t)) in d_alpha.iter_mut().zip(f.alpha.iter().zip(&tgt)) {
                        *d += lambda * 2.0 * (a - t);
                    }
                }
                let ds = softmax_backward(&f.alpha, &d_alpha);
                let last = &f.u[t_len - 1];
                let mut du: Vec<Vec<f64>> = ds
                    .iter()
                    .map(|&s| last.iter().map(|v| s * v).collect())
                    .collect();
                for (ut, &s) in f.u.iter().zip(&ds) {
                    for (d, v) in du[t_len - 1].iter_mut().zip(ut) {
                        *d += s * v;
                    }
                }
                let gatt = grad.model.att.as_mut().expect("gradient layout matches");
                for t in 0..t_len {
                    let da = tanh_backward(&f.u[t], &du[t]);
                    let dht = att.backward(&f.hs[t], &da, gatt);
                    dh[t].iter_mut().zip(dht).for_each(|(a, b)| *a += b);
                }
            }
            None => {
                let n = t_len as f64;
                for k in 0..hidden {
                    let dmean = d_summary[k] / n;
                    for row in dh.iter_mut() {
                        row[k] += dmean;
                    }
                    dh[f.pool_arg[k]][k] += d_summary[hidden + k];
                }
            }
        }
        let dx = params.fs.backward_seq(&f.fs, &dh, &mut grad.model.fs)?;
        if let Some(ge) = grad.embedding.as_mut() {
            scatter_rows(ge, &rec.tokens, &dx);
        }
    }
    Ok((jc_sum, ja_sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub variant: Variant,
    pub hidden: usize,
    pub attention: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub max_tokens: usize,
    /// Divide the attention target by its number of ones.
    pub normalize_target: bool,
    pub fine_tune_embeddings: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            variant: Variant::default(),
            hidden: 256,
            attention: 128,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lambda: 100.0,
            seed: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
            normalize_target: false,
            fine_tune_embeddings: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonzero("classifier hidden size", self.hidden)?;
        check_nonzero("attention size", self.attention)?;
        check_nonzero("classifier epochs", self.epochs)?;
        check_nonzero("classifier batch size", self.batch_size)?;
        check_nonzero("max_tokens", self.max_tokens)?;
        check_positive("classifier learning rate", self.lr)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("λ must be finite and ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }

    fn loss(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            normalize_target: self.normalize_target,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierTraining {
    pub params: ClassifierParams,
    pub embeddings: Option<EmbeddingTable>,
    /// Mean `J_c` per record, per epoch.
    pub jc_trace: Vec<f64>,
    /// Mean `J_a` per record, per epoch (attention variants only).
    pub ja_trace: Vec<f64>,
    pub val_accuracy_trace: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEval {
    pub records: usize,
    pub accuracy: f64,
    /// Mean `Σ_t (α̂_t − α_t)²` (raw targets); attention variants only.
    pub mean_attention_loss: Option<f64>,
    /// Mean attention weight on annotated tokens; attention variants only.
    pub mean_trigger_mass: Option<f64>,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
}

pub fn evaluate_classifier(
    params: &ClassifierParams,
    table: &EmbeddingTable,
    labels: &LabelSpace,
    records: &[ClassifierRecord],
    max_tokens: usize,
) -> Result<ClassifierEval> {
    let encoded = encode_records(records, table, labels, max_tokens)?;
    evaluate_encoded(params, table.vectors(), labels, &encoded)
}

fn evaluate_encoded(
    params: &ClassifierParams,
    vectors: &Tensor2,
    labels: &LabelSpace,
    encoded: &[EncodedRecord],
) -> Result<ClassifierEval> {
    let mut correct = 0usize;
    let mut att_loss = 0.0;
    let mut mass = 0.0;
    let mut predicted = Vec::with_capacity(encoded.len());
    let mut gold = Vec::with_capacity(encoded.len());
    for rec in encoded {
        let out = classify_ids(params, vectors, &rec.tokens, &rec.r4v)?;
        let p = out.argmax();
        correct += usize::from(p == rec.label);
        predicted.push(labels.code(p).to_string());
        gold.push(labels.code(rec.label).to_string());
        if let Some(a) = &out.attention {
            att_loss += attention_loss(a, &rec.attention)?;
            mass += a.iter().zip(&rec.attention).map(|(w, t)| w * t).sum::<f64>();
        }
    }
    let n = encoded.len().max(1) as f64;
    let has_att = params.att.is_some() && !encoded.is_empty();
    Ok(ClassifierEval {
        records: encoded.len(),
        accuracy: correct as f64 / n,
        mean_attention_loss: has_att.then_some(att_loss / n),
        mean_trigger_mass: has_att.then_some(mass / n),
        predicted,
        gold,
    })
}

pub fn train_classifier(
    train: &[ClassifierRecord],
    validation: &[ClassifierRecord],
    labels: &LabelSpace,
    table: &EmbeddingTable,
    config: &ClassifierConfig,
) -> Result<ClassifierTraining> {
    config.validate()?;
    if labels.len() < 2 {
        return Err(Error::config(format!(
            "the classifier needs at least two labels, the label space has {}",
            labels.len()
        )));
    }
    if train.is_empty() {
        return Err(Error::config("the classifier training set is empty"));
    }
    let encoded = encode_records(train, table, labels, config.max_tokens)?;
    if config.variant.encoder == Encoder::Supervised {
        if let Some(i) = encoded.iter().position(|r| r.attention.iter().all(|&a| a == 0.0)) {
            return Err(Error::data(format!(
                "record {i} ({}#{}) has no attention target; the supervised variant needs one",
                train[i].report_id, train[i].sentence_index
            )));
        }
    }
    let val_encoded = encode_records(validation, table, labels, config.max_tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = Trainable {
        model: ClassifierParams::init(
            config.variant,
            table.dim(),
            config.hidden,
            config.attention,
            labels.len(),
            &mut rng,
        ),
        embedding: config
            .fine_tune_embeddings
            .then(|| table.vectors().clone()),
    };
    let mut adam = AdamState::new(
        &state,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    );
    let mut grad = state.zeros_like();
    let loss = config.loss();
    let mut best: Option<(f64, Trainable<ClassifierParams>, usize)> = None;
    let (mut jc_trace, mut ja_trace, mut val_trace) = (Vec::new(), Vec::new(), Vec::new());

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let (mut jc, mut ja) = (0.0, 0.0);
        for idx in epoch_batches(encoded.len(), config.batch_size, &mut rng) {
            let batch: Vec<&EncodedRecord> = idx.iter().map(|&i| &encoded[i]).collect();
            grad.zero();
            let vectors = state.embedding.as_ref().unwrap_or(table.vectors());
            let (c, a) = classifier_gradient(&state.model, vectors, &batch, loss, &mut grad)?;
            grad.freeze_unk();
            adam.update(&mut state, &grad)?;
            jc += c;
            ja += a;
        }
        if !state.all_finite() {
            return Err(Error::Numeric(format!(
                "classifier parameters diverged in epoch {epoch}"
            )));
        }
        let n = encoded.len() as f64;
        jc_trace.push(jc / n);
        if state.model.att.is_some() {
            ja_trace.push(ja / n);
        }
        let vectors = state.embedding.as_ref().unwrap_or(table.vectors());
        let acc = if val_encoded.is_empty() {
            f64::NAN
        } else {
            evaluate_encoded(&state.model, vectors, labels, &val_encoded)?.accuracy
        };
        val_trace.push(acc);
        log::info!(
            "classifier [{}] epoch {epoch}/{}: J_c {:.5}, J_a {:.5}, validation accuracy {acc:.4} ({:.1}s)",
            config.variant,
            config.epochs,
            jc / n,
            ja / n,
            started.elapsed().as_secs_f64()
        );
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_encoded.is_empty() || acc > *b,
        };
        if better {
            best = Some((acc, state.clone(), epoch));
        }
    }
    let (_, mut kept, best_epoch) = best.expect("at least one epoch ran");
    kept.quantize_f32();
    let embeddings = match kept.embedding {
        Some(v) => Some(table.with_vectors(v)?),
        None => None,
    };
    Ok(ClassifierTraining {
        params: kept.model,
        embeddings,
        jc_trace,
        ja_trace,
        val_accuracy_trace: val_trace,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_loss_examples() {
        assert_eq!(attention_loss(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((attention_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((attention_loss(&[0.2, 0.3, 0.5], &[0.0, 0.0, 1.0]).unwrap() - 0.38).abs() < 1e-12);
        assert!(attention_loss(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        assert_eq!(joint_loss(0.7, 3.0, 0.0).unwrap(), 0.7);
        assert!((joint_loss(0.2, 0.003, 100.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(joint_loss(0.2, 0.003, -1.0).is_err());
        assert_eq!(ClassifierConfig::default().lambda, 100.0);
    }

    #[test]
    fn pooling_examples() {
        let h = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(mean_max_pool(&h).unwrap(), vec![0.5, 0.5, 1.0, 1.0]);
        assert_eq!(mean_max_pool(&h[..1]).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        assert!(mean_max_pool(&[]).is_err());
    }

    #[test]
    fn attention_singleton_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let att = Linear::init(3, 2, &mut rng);
        assert_eq!(attend(&[vec![0.1, 0.2, 0.3]], &att).unwrap(), vec![1.0]);
        let same = vec![vec![0.4, -0.2, 0.1]; 4];
        for a in attend(&same, &att).unwrap() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        assert!(attend(&[], &att).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("attentive".parse::<Variant>().unwrap_err().is_config());
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let table = EmbeddingTable::from_pairs(2, vec![("a".into(), vec![1.0, 2.0])]).unwrap();
        for v in Variant::ALL {
            let p = ClassifierParams::zeros(v, 2, 4, 3, 5);
            let out = classify(&["a", "a"], &["a"], &p, &table, 128).unwrap();
            for q in &out.probs {
                assert!((q - 0.2).abs() < 1e-15);
            }
            assert_eq!(out.attention.is_some(), v.encoder.has_attention());
        }
    }

    #[test]
    fn r4v_widens_the_context() {
        let with = ClassifierParams::zeros(Variant::new(Encoder::Supervised, true), 8, 256, 128, 3);
        let without =
            ClassifierParams::zeros(Variant::new(Encoder::Supervised, false), 8, 256, 128, 3);
        assert_eq!((with.context_width(), without.context_width()), (512, 256));
    }
}
