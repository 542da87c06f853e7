//! Synthetic pathology-style corpus with planted trigger phrases.
//!
//! Every focus sentence carries exactly one label's trigger bigram inside
//! random filler, annotated at the trigger span. Other sentences are filler.
//! A non-zero `distractor_rate` (off by default) adds "distractors":
//! another label's trigger preceded by a history/negation marker and left
//! unannotated, as in "prior history of ...". The reason-for-visit text names each planted
//! label's cue word with probability `r4v_cue_rate`.
//!
//! The matching embedding table gives all trigger words a shared offset on
//! one coordinate and all marker words an offset on another, and, for the
//! first `ambiguous_pairs` pairs of labels, gives the second label's
//! trigger words exactly the vectors of the first label's. Those labels
//! can only be told apart through the reason for visit.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::data::{Corpus, Report};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::text::ABBREVIATIONS;

pub const MARKERS: &[&str] = &["history", "prior", "previous", "negative", "excluded"];

/// Offset of trigger words on embedding coordinate 0.
const TRIGGER_SHIFT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Number of filler words.
    pub vocab_size: usize,
    pub labels: usize,
    pub triggers_per_label: usize,
    pub sentences_per_report: (usize, usize),
    pub focus_per_report: (usize, usize),
    /// Tokens per sentence, trigger included.
    pub sentence_length: (usize, usize),
    pub reports: usize,
    /// Probability that a planted label's reason-for-visit cue is replaced
    /// by a random other label's cue.
    pub noise_rate: f64,
    pub r4v_cue_rate: f64,
    pub ambiguous_pairs: usize,
    /// Probability that a report gets one distractor sentence.
    pub distractor_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Explicit trigger bigrams per label ("word word"); generated when
    /// absent.
    pub triggers: Option<Vec<Vec<String>>>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            vocab_size: 200,
            labels: 12,
            triggers_per_label: 2,
            sentences_per_report: (3, 10),
            focus_per_report: (1, 3),
            sentence_length: (5, 12),
            reports: 2800,
            noise_rate: 0.05,
            r4v_cue_rate: 0.8,
            ambiguous_pairs: 2,
            distractor_rate: 0.0,
            embedding_dim: 32,
            seed: 13,
            triggers: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &str, (lo, hi): (usize, usize), min: usize| {
            if lo < min || lo > hi {
                Err(Error::config(format!("{name} range ({lo}, {hi}) is invalid")))
            } else {
                Ok(())
            }
        };
        if let Some(t) = &self.triggers {
            check_triggers(t, self.labels)?;
        }
        range("sentences_per_report", self.sentences_per_report, 1)?;
        range("focus_per_report", self.focus_per_report, 1)?;
        range("sentence_length", self.sentence_length, 3)?;
        if self.focus_per_report.1 > self.sentences_per_report.0 {
            return Err(Error::config(
                "focus_per_report maximum exceeds the minimum sentence count",
            ));
        }
        if self.labels < 2 {
            return Err(Error::config("at least two labels are required"));
        }
        if self.vocab_size < 2 || self.triggers_per_label == 0 || self.embedding_dim < 3 {
            return Err(Error::config(
                "vocab_size ≥ 2, triggers_per_label ≥ 1 and embedding_dim ≥ 3 are required",
            ));
        }
        if 2 * self.ambiguous_pairs > self.labels {
            return Err(Error::config("more ambiguous pairs than labels allow"));
        }
        for (name, p) in [
            ("noise_rate", self.noise_rate),
            ("r4v_cue_rate", self.r4v_cue_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must be a probability")));
            }
        }
        Ok(())
    }
}

fn check_triggers(triggers: &[Vec<String>], labels: usize) -> Result<()> {
    if triggers.len() != labels {
        return Err(Error::config(format!(
            "{} trigger lists given for {labels} labels",
            triggers.len()
        )));
    }
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    for (k, list) in triggers.iter().enumerate() {
        if list.is_empty() {
            return Err(Error::config(format!("label {k} has no trigger")));
        }
        for t in list {
            let words: Vec<String> = t.split_whitespace().map(|w| w.to_lowercase()).collect();
            if words.len() != 2 {
                return Err(Error::config(format!("trigger {t:?} is not a bigram")));
            }
            if !seen.insert(words) {
                return Err(Error::config(format!(
                    "trigger collision: {t:?} is used more than once"
                )));
            }
        }
    }
    Ok(())
}

pub fn label_code(k: usize) -> String {
    format!("S{:02}.{}", k, k % 10)
}

/// Generated corpus plus the embedding table and the vocabulary roles.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    pub corpus: Corpus,
    pub embeddings: EmbeddingTable,
    pub codes: Vec<String>,
    pub triggers: Vec<Vec<[String; 2]>>,
    pub cues: Vec<String>,
}

struct WordFactory {
    used: HashSet<String>,
}

impl WordFactory {
    fn new() -> Self {
        let mut used: HashSet<String> = MARKERS.iter().map(|s| s.to_string()).collect();
        for a in ABBREVIATIONS {
            used.insert(a.trim_end_matches('.').to_string());
        }
        WordFactory { used }
    }

    fn reserve(&mut self, w: &str) {
        self.used.insert(w.to_string());
    }

    fn fresh<R: Rng>(&mut self, rng: &mut R) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syll = rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syll {
                w.push(*C.choose(rng).unwrap() as char);
                w.push(*V.choose(rng).unwrap() as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sentence under construction: words plus the index of an annotated
/// bigram, if any.
struct Sentence {
    words: Vec<String>,
    trigger_at: Option<(usize, String)>,
}

pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticBundle> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = WordFactory::new();

    let triggers: Vec<Vec<[String; 2]>> = match &config.triggers {
        Some(t) => t
            .iter()
            .map(|list| {
                list.iter()
                    .map(|s| {
                        let mut it = s.split_whitespace().map(|w| w.to_lowercase());
                        let pair = [it.next().unwrap(), it.next().unwrap()];
                        words.reserve(&pair[0]);
                        words.reserve(&pair[1]);
                        pair
                    })
                    .collect()
            })
            .collect(),
        None => (0..config.labels)
            .map(|_| {
                (0..config.triggers_per_label)
                    .map(|_| [words.fresh(&mut rng), words.fresh(&mut rng)])
                    .collect()
            })
            .collect(),
    };
    let filler: Vec<String> = (0..config.vocab_size).map(|_| words.fresh(&mut rng)).collect();
    let cues: Vec<String> = (0..config.labels).map(|_| words.fresh(&mut rng)).collect();
    let r4v_generic: Vec<String> = (0..8).map(|_| words.fresh(&mut rng)).collect();
    let codes: Vec<String> = (0..config.labels).map(label_code).collect();

    let mut reports = Vec::with_capacity(config.reports);
    for n in 0..config.reports {
        reports.push(gen_report(
            config,
            &mut rng,
            format!("syn-{n:05}"),
            &triggers,
            &filler,
            &cues,
            &r4v_generic,
            &codes,
        ));
    }

    let embeddings = gen_embeddings(config, &mut rng, &triggers, &filler, &cues, &r4v_generic)?;
    let mut corpus = Corpus::new(reports);
    corpus.provenance = Some(serde_json::json!({
        "generator": "synthetic",
        "config": config,
        "embedding_hash": embeddings.content_hash(),
    }));
    corpus.validate()?;
    Ok(SyntheticBundle {
        corpus,
        embeddings,
        codes,
        triggers,
        cues,
    })
}

fn sample_count<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    // halving weights favour small counts
    let weights: Vec<f64> = (lo..=hi).map(|k| 0.5f64.powi((k - lo) as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in (lo..=hi).zip(&weights) {
        if u < *w {
            return k;
        }
        u -= w;
    }
    hi
}

#[allow(clippy::too_many_arguments)]
fn gen_report(
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    id: String,
    triggers: &[Vec<[String; 2]>],
    filler: &[String],
    cues: &[String],
    r4v_generic: &[String],
    codes: &[String],
) -> Report {
    let (s_lo, s_hi) = config.sentences_per_report;
    let n_sent = rng.random_range(s_lo..=s_hi);
    let k = sample_count(rng, config.focus_per_report).min(n_sent);
    let mut positions: Vec<usize> = (0..n_sent).collect();
    positions.shuffle(rng);
    let focus: Vec<usize> = positions[..k].to_vec();
    let planted: Vec<usize> = (0..k).map(|_| rng.random_range(0..config.labels)).collect();
    let planted_set: BTreeSet<usize> = planted.iter().copied().collect();

    let distractor = if k < n_sent && rng.random::<f64>() < config.distractor_rate {
        let others: Vec<usize> = (0..config.labels).filter(|l| !planted_set.contains(l)).collect();
        others.choose(rng).map(|&l| (positions[k], l))
    } else {
        None
    };

    let filler_words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| filler.choose(rng).unwrap().clone()).collect()
    };
    let (l_lo, l_hi) = config.sentence_length;

    let mut sentences = Vec::with_capacity(n_sent);
    for s in 0..n_sent {
        let len = rng.random_range(l_lo..=l_hi);
        if let Some(j) = focus.iter().position(|&f| f == s) {
            let label = planted[j];
            let t = triggers[label].choose(rng).unwrap();
            let mut w = filler_words(rng, len - 2);
            let at = rng.random_range(0..=w.len());
            w.splice(at..at, t.iter().cloned());
            sentences.push(Sentence {
                words: w,
                trigger_at: Some((at, codes[label].clone())),
            });
        } else if let Some((_, label)) = distractor.filter(|&(p, _)| p == s) {
            let t = triggers[label].choose(rng).unwrap();
            let gap = rng.random_range(0..=2usize.min(len.saturating_sub(3)));
            let mut w = vec![MARKERS.choose(rng).unwrap().to_string()];
            w.extend(filler_words(rng, gap));
            w.extend(t.iter().cloned());
            let rest = len.saturating_sub(w.len());
            w.extend(filler_words(rng, rest));
            sentences.push(Sentence {
                words: w,
                trigger_at: None,
            });
        } else {
            sentences.push(Sentence {
                words: filler_words(rng, len),
                trigger_at: None,
            });
        }
    }

    let mut text = String::new();
    let mut offset = 0usize;
    let mut annotations = Vec::new();
    for (si, s) in sentences.iter().enumerate() {
        if si > 0 {
            text.push(' ');
            offset += 1;
        }
        for (wi, w) in s.words.iter().enumerate() {
            if wi > 0 {
                text.push(' ');
                offset += 1;
            }
            let surface = if wi == 0 { capitalize(w) } else { w.clone() };
            if let Some((at, code)) = &s.trigger_at {
                if wi == *at {
                    let end = offset + w.chars().count() + 1 + s.words[wi + 1].chars().count();
                    annotations.push(Annotation::new(offset, end, code.clone()));
                }
            }
            offset += surface.chars().count();
            text.push_str(&surface);
        }
        text.push('.');
        offset += 1;
    }

    let mut r4v: Vec<String> = Vec::new();
    for &label in &planted_set {
        if rng.random::<f64>() < config.r4v_cue_rate {
            let cue = if rng.random::<f64>() < config.noise_rate {
                cues.choose(rng).unwrap()
            } else {
                &cues[label]
            };
            r4v.push(cue.clone());
        }
    }
    let generic = rng.random_range(1..=3);
    for _ in 0..generic {
        r4v.push(r4v_generic.choose(rng).unwrap().clone());
    }
    r4v.shuffle(rng);

    Report::new(id, text, r4v.join(" "), annotations)
}

fn gen_embeddings(
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    triggers: &[Vec<[String; 2]>],
    filler: &[String],
    cues: &[String],
    r4v_generic: &[String],
) -> Result<EmbeddingTable> {
    let d = config.embedding_dim;
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let vec_with = |rng: &mut ChaCha8Rng, feature: Option<(usize, f64)>| -> Vec<f64> {
        let mut v: Vec<f64> = (0..d).map(|_| noise.sample(rng)).collect();
        if let Some((dim, shift)) = feature {
            v[dim] += shift;
        }
        v
    };
    let mut pairs: Vec<(String, Vec<f64>)> = Vec::new();
    let mut trigger_vecs: Vec<Vec<[Vec<f64>; 2]>> = Vec::new();
    for (k, list) in triggers.iter().enumerate() {
        let sibling_of = (k % 2 == 1 && k / 2 < config.ambiguous_pairs).then(|| k - 1);
        let mut vecs = Vec::new();
        for (j, t) in list.iter().enumerate() {
            let pair = match sibling_of.and_then(|s| trigger_vecs[s].get(j)) {
                Some(v) => v.clone(),
                None => [vec_with(rng, Some((0, TRIGGER_SHIFT))), vec_with(rng, Some((0, TRIGGER_SHIFT)))],
            };
            pairs.push((t[0].clone(), pair[0].clone()));
            pairs.push((t[1].clone(), pair[1].clone()));
            vecs.push(pair);
        }
        trigger_vecs.push(vecs);
    }
    for m in MARKERS {
        pairs.push((m.to_string(), vec_with(rng, Some((1, 3.0)))));
    }
    for w in filler.iter().chain(cues).chain(r4v_generic) {
        pairs.push((w.clone(), vec_with(rng, None)));
    }
    pairs.push((".".to_string(), vec_with(rng, None)));
    EmbeddingTable::from_pairs(d, pairs)
}
