//! Level one: tags every sentence of a report as focus (1) or not (0).
//!
//! Sentence `i` is encoded as `[mean(sentence embeddings), mean(r4v
//! embeddings)]`; a unidirectional LSTM runs over the report's sentences
//! and a linear layer with log-softmax gives the per-sentence tag
//! distribution.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PreparedReport, TaggerExample};
use crate::embedding::{mean_of_ids, EmbeddingTable};
use crate::error::{Error, Result};
use crate::metrics::{multiclass_metrics, PredictionSet};
use crate::numcore::{
    concat, log_softmax, AdamConfig, AdamState, Linear, LstmCell, LstmTrace, ParamSet, ParamView,
    Tensor2,
};
use crate::training::{
    check_nonzero, check_positive, epoch_batches, scatter_mean, Trainable,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    pub lstm: LstmCell,
    pub out: Linear,
}

impl TaggerParams {
    pub fn zeros(embedding_dim: usize, hidden: usize) -> Self {
        TaggerParams {
            lstm: LstmCell::zeros(2 * embedding_dim, hidden),
            out: Linear::zeros(hidden, 2),
        }
    }

    pub fn init<R: rand::Rng + ?Sized>(embedding_dim: usize, hidden: usize, rng: &mut R) -> Self {
        TaggerParams {
            lstm: LstmCell::init(2 * embedding_dim, hidden, rng),
            out: Linear::init(hidden, 2, rng),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.lstm.input_size() / 2
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden_size()
    }
}

impl ParamSet for TaggerParams {
    fn views(&self) -> Vec<ParamView<'_>> {
        let mut v = self.lstm.views_prefixed("tagger.lstm");
        v.extend(self.out.views_prefixed("tagger.out"));
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.lstm.slices_mut_inner();
        v.extend(self.out.slices_mut_inner());
        v
    }
}

/// `[mean sentence embedding, mean r4v embedding]`, length `2d`.
pub fn encode_sentence<S: AsRef<str>>(
    sentence: &[S],
    r4v: &[S],
    table: &EmbeddingTable,
) -> Vec<f64> {
    let e = mean_of_ids(&table.ids(sentence), table.vectors());
    let r = mean_of_ids(&table.ids(r4v), table.vectors());
    concat(&[&e, &r])
}

/// A report mapped to embedding ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedReport {
    pub sentences: Vec<Vec<usize>>,
    pub r4v: Vec<usize>,
    pub labels: Vec<u8>,
}

impl EncodedReport {
    pub fn new(example: &TaggerExample, table: &EmbeddingTable) -> Self {
        EncodedReport {
            sentences: example.sentences.iter().map(|s| table.ids(s)).collect(),
            r4v: table.ids(&example.r4v),
            labels: example.labels.clone(),
        }
    }

    fn inputs(&self, vectors: &Tensor2) -> Vec<Vec<f64>> {
        let r = mean_of_ids(&self.r4v, vectors);
        self.sentences
            .iter()
            .map(|s| concat(&[&mean_of_ids(s, vectors), &r]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedReport {
    pub tags: Vec<u8>,
    /// Probability of the focus tag per sentence.
    pub focus_prob: Vec<f64>,
}

struct Forward {
    trace: LstmTrace,
    log_probs: Vec<[f64; 2]>,
}

fn forward(params: &TaggerParams, inputs: Vec<Vec<f64>>) -> Result<Forward> {
    if inputs.is_empty() {
        return Err(Error::invalid("cannot tag a report without sentences"));
    }
    let trace = params.lstm.forward_seq(&inputs)?;
    let mut log_probs = Vec::with_capacity(inputs.len());
    for t in 0..trace.len() {
        let lp = log_softmax(&params.out.forward(trace.hidden(t))?)?;
        log_probs.push([lp[0], lp[1]]);
    }
    Ok(Forward { trace, log_probs })
}

fn decide(log_probs: &[[f64; 2]]) -> TaggedReport {
    let focus_prob: Vec<f64> = log_probs.iter().map(|lp| lp[1].exp()).collect();
    // ties go to class 0
    let tags = log_probs.iter().map(|lp| u8::from(lp[1] > lp[0])).collect();
    TaggedReport { tags, focus_prob }
}

/// Tags pre-tokenized sentences.
pub fn tag_sentences<S: AsRef<str>>(
    sentences: &[Vec<S>],
    r4v: &[S],
    params: &TaggerParams,
    table: &EmbeddingTable,
) -> Result<TaggedReport> {
    check_dim(params, table)?;
    let inputs = sentences
        .iter()
        .map(|s| encode_sentence(s, r4v, table))
        .collect();
    Ok(decide(&forward(params, inputs)?.log_probs))
}

pub fn tag_report(
    report: &PreparedReport,
    params: &TaggerParams,
    table: &EmbeddingTable,
) -> Result<TaggedReport> {
    tag_sentences(&report.all_sentence_words(), &report.r4v, params, table)
}

fn check_dim(params: &TaggerParams, table: &EmbeddingTable) -> Result<()> {
    if params.embedding_dim() != table.dim() {
        return Err(Error::config(format!(
            "tagger expects {}-dimensional embeddings, table has {}",
            params.embedding_dim(),
            table.dim()
        )));
    }
    Ok(())
}

/// `-Σ_i w_{y_i} log P(y_i) / Σ_i w_{y_i}`.
pub fn tagger_loss(log_probs: &[[f64; 2]], gold: &[u8], weights: [f64; 2]) -> Result<f64> {
    let (num, den) = weighted_nll(log_probs, gold, weights)?;
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

fn weighted_nll(log_probs: &[[f64; 2]], gold: &[u8], weights: [f64; 2]) -> Result<(f64, f64)> {
    if log_probs.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} gold tags",
            log_probs.len(),
            gold.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (lp, &y) in log_probs.iter().zip(gold) {
        if y > 1 {
            return Err(Error::invalid(format!("gold tag {y} is not in {{0, 1}}")));
        }
        let w = weights[y as usize];
        num -= w * lp[y as usize];
        den += w;
    }
    Ok((num, den))
}

fn total_weight(batch: &[&EncodedReport], weights: [f64; 2]) -> f64 {
    batch
        .iter()
        .flat_map(|r| r.labels.iter())
        .map(|&y| weights[(y as usize).min(1)])
        .sum()
}

/// Weighted NLL of a batch, normalized by the batch's total weight.
pub fn tagger_objective(
    params: &TaggerParams,
    vectors: &Tensor2,
    batch: &[&EncodedReport],
    weights: [f64; 2],
) -> Result<f64> {
    let den = total_weight(batch, weights);
    let mut num = 0.0;
    for r in batch {
        let f = forward(params, r.inputs(vectors))?;
        num += weighted_nll(&f.log_probs, &r.labels, weights)?.0;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Objective value and its gradient. The embedding gradient is filled
/// when `grad.embedding` is present.
pub fn tagger_gradient(
    params: &TaggerParams,
    vectors: &Tensor2,
    batch: &[&EncodedReport],
    weights: [f64; 2],
    grad: &mut Trainable<TaggerParams>,
) -> Result<f64> {
    let den = total_weight(batch, weights);
    if den <= 0.0 {
        return Ok(0.0);
    }
    let d = params.embedding_dim();
    let mut num = 0.0;
    for r in batch {
        let f = forward(params, r.inputs(vectors))?;
        num += weighted_nll(&f.log_probs, &r.labels, weights)?.0;
        let mut dh = Vec::with_capacity(f.log_probs.len());
        for (t, (lp, &y)) in f.log_probs.iter().zip(&r.labels).enumerate() {
            let scale = weights[y as usize] / den;
            let dz: Vec<f64> = (0..2)
                .map(|k| scale * (lp[k].exp() - f64::from(u8::from(k == y as usize))))
                .collect();
            dh.push(params.out.backward(f.trace.hidden(t), &dz, &mut grad.model.out));
        }
        let dx = params.lstm.backward_seq(&f.trace, &dh, &mut grad.model.lstm)?;
        if let Some(ge) = grad.embedding.as_mut() {
            for (s, dxi) in r.sentences.iter().zip(&dx) {
                scatter_mean(ge, s, &dxi[..d]);
                scatter_mean(ge, &r.r4v, &dxi[d..]);
            }
        }
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// `[w0, w1]`; inverse class frequency (mean 1) when absent.
    pub class_weights: Option<[f64; 2]>,
    pub fine_tune_embeddings: bool,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            hidden: 256,
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            class_weights: None,
            fine_tune_embeddings: false,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        check_nonzero("tagger hidden size", self.hidden)?;
        check_nonzero("tagger epochs", self.epochs)?;
        check_nonzero("tagger batch size", self.batch_size)?;
        check_positive("tagger learning rate", self.lr)?;
        if let Some([a, b]) = self.class_weights {
            check_positive("class weight w0", a)?;
            check_positive("class weight w1", b)?;
        }
        Ok(())
    }
}

/// Inverse class frequency, scaled so the two weights average to 1.
pub fn inverse_frequency_weights(examples: &[TaggerExample]) -> Result<[f64; 2]> {
    let mut n = [0usize; 2];
    for e in examples {
        for &y in &e.labels {
            n[(y as usize).min(1)] += 1;
        }
    }
    if n[1] == 0 {
        return Err(Error::config(
            "the training set has no focus sentence; the tagger cannot be trained",
        ));
    }
    if n[0] == 0 {
        return Ok([1.0, 1.0]);
    }
    let inv = [1.0 / n[0] as f64, 1.0 / n[1] as f64];
    let mean = (inv[0] + inv[1]) / 2.0;
    Ok([inv[0] / mean, inv[1] / mean])
}

#[derive(Debug, Clone)]
pub struct TaggerTraining {
    pub params: TaggerParams,
    /// Fine-tuned embedding table, when fine-tuning was on.
    pub embeddings: Option<EmbeddingTable>,
    pub class_weights: [f64; 2],
    /// Mean training objective per epoch.
    pub loss_trace: Vec<f64>,
    pub val_macro_f1_trace: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Sentence-level macro-F1 of the tagger over labelled reports.
pub fn tagger_macro_f1(
    params: &TaggerParams,
    table: &EmbeddingTable,
    examples: &[TaggerExample],
) -> Result<f64> {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for e in examples {
        let t = tag_sentences(&e.sentences, &e.r4v, params, table)?;
        pred.extend(t.tags.iter().map(|v| v.to_string()));
        gold.extend(e.labels.iter().map(|v| v.to_string()));
    }
    if gold.is_empty() {
        return Ok(0.0);
    }
    Ok(multiclass_metrics(&PredictionSet::from_labels(&pred, &gold)?)?
        .macro_
        .f1)
}

pub fn train_tagger(
    train: &[TaggerExample],
    validation: &[TaggerExample],
    table: &EmbeddingTable,
    config: &TaggerConfig,
) -> Result<TaggerTraining> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::config("the tagger training set is empty"));
    }
    let weights = match config.class_weights {
        Some(w) => {
            inverse_frequency_weights(train)?;
            w
        }
        None => inverse_frequency_weights(train)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoded: Vec<EncodedReport> = train.iter().map(|e| EncodedReport::new(e, table)).collect();
    let mut state = Trainable {
        model: TaggerParams::init(table.dim(), config.hidden, &mut rng),
        embedding: config
            .fine_tune_embeddings
            .then(|| table.vectors().clone()),
    };
    let adam_cfg = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&state, adam_cfg);
    let mut grad = state.zeros_like();
    let mut best: Option<(f64, Trainable<TaggerParams>, usize)> = None;
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let mut val_trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for idx in epoch_batches(encoded.len(), config.batch_size, &mut rng) {
            let batch: Vec<&EncodedReport> = idx.iter().map(|&i| &encoded[i]).collect();
            grad.zero();
            let vectors = state.embedding.as_ref().unwrap_or(table.vectors());
            let loss = tagger_gradient(&state.model, vectors, &batch, weights, &mut grad)?;
            grad.freeze_unk();
            adam.update(&mut state, &grad)?;
            epoch_loss += loss;
            batches += 1;
        }
        if !state.all_finite() {
            return Err(Error::Numeric(format!("tagger parameters diverged in epoch {epoch}")));
        }
        let epoch_loss = epoch_loss / batches as f64;
        loss_trace.push(epoch_loss);
        let current_table = current_table(table, &state)?;
        let f1 = if validation.is_empty() {
            f64::NAN
        } else {
            tagger_macro_f1(&state.model, &current_table, validation)?
        };
        val_trace.push(f1);
        log::info!(
            "tagger epoch {epoch}/{}: loss {epoch_loss:.5}, validation macro-F1 {f1:.4} ({:.1}s)",
            config.epochs,
            started.elapsed().as_secs_f64()
        );
        let better = match &best {
            None => true,
            Some((b, _, _)) => validation.is_empty() || f1 > *b,
        };
        if better {
            best = Some((f1, state.clone(), epoch));
        }
    }
    let (_, mut kept, best_epoch) = best.expect("at least one epoch ran");
    kept.quantize_f32();
    let embeddings = match kept.embedding {
        Some(v) => Some(table.with_vectors(v)?),
        None => None,
    };
    Ok(TaggerTraining {
        params: kept.model,
        embeddings,
        class_weights: weights,
        loss_trace,
        val_macro_f1_trace: val_trace,
        best_epoch,
    })
}

fn current_table(base: &EmbeddingTable, state: &Trainable<TaggerParams>) -> Result<EmbeddingTable> {
    match &state.embedding {
        Some(v) => base.with_vectors(v.clone()),
        None => Ok(base.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::from_pairs(
            2,
            vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn encode_concatenates_means() {
        let t = table();
        assert_eq!(encode_sentence(&["a"], &["b"], &t), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(encode_sentence(&["a"], &[], &t), vec![1.0, 0.0, 0.0, 0.0]);
        assert_ne!(
            encode_sentence(&["a"], &["a"], &t),
            encode_sentence(&["a"], &["b"], &t)
        );
    }

    #[test]
    fn zero_params_tie_to_class_zero() {
        let p = TaggerParams::zeros(2, 3);
        let r = tag_sentences(&[vec!["a"]], &[], &p, &table()).unwrap();
        assert_eq!(r.tags, vec![0]);
        assert!((r.focus_prob[0] - 0.5).abs() < 1e-15);
        assert!(tag_sentences::<&str>(&[], &[], &p, &table()).is_err());
    }

    #[test]
    fn loss_cases() {
        let ln_half = 0.5f64.ln();
        let uniform = vec![[ln_half, ln_half]; 3];
        let l = tagger_loss(&uniform, &[0, 1, 0], [1.0, 1.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);

        let lp = [[0.8f64.ln(), 0.2f64.ln()], [0.3f64.ln(), 0.7f64.ln()]];
        let l = tagger_loss(&lp, &[0, 1], [1.0, 5.0]).unwrap();
        let expected = (-(0.8f64.ln()) - 5.0 * 0.7f64.ln()) / 6.0;
        assert!((l - expected).abs() < 1e-12);

        let confident = [[0.0, -1e9]];
        assert!(tagger_loss(&confident, &[0], [1.0, 1.0]).unwrap() < 1e-12);
        assert!(tagger_loss(&confident, &[2], [1.0, 1.0]).is_err());
    }

    #[test]
    fn inverse_weights_average_one() {
        let ex = TaggerExample {
            report_id: "r".into(),
            sentences: vec![vec![]; 4],
            r4v: vec![],
            labels: vec![0, 0, 0, 1],
        };
        let w = inverse_frequency_weights(std::slice::from_ref(&ex)).unwrap();
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 3.0).abs() < 1e-12);
        let none = TaggerExample {
            labels: vec![0, 0],
            ..ex
        };
        assert!(inverse_frequency_weights(&[none]).unwrap_err().is_config());
    }
}
