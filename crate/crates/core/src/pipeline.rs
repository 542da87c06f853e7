//! End-to-end hierarchical inference: tag sentences, classify each focus
//! sentence, union the codes, and keep per-sentence evidence.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{ClassifierCheckpoint, TaggerCheckpoint};
use crate::classifier::{classify, ClassifierParams};
use crate::data::{prepare_report, LabelSpace, Report};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tagger::{tag_report, TaggedReport, TaggerParams};

pub const PREDICTION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub params: TaggerParams,
    pub table: EmbeddingTable,
    pub base_hash: String,
}

impl TaggerModel {
    pub fn from_checkpoint(ckpt: TaggerCheckpoint, external: Option<&EmbeddingTable>) -> Result<Self> {
        Ok(TaggerModel {
            table: ckpt.embedding.resolve(external)?,
            base_hash: ckpt.embedding.base_hash,
            params: ckpt.params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub params: ClassifierParams,
    pub table: EmbeddingTable,
    pub labels: LabelSpace,
    pub base_hash: String,
    pub max_tokens: usize,
}

impl ClassifierModel {
    pub fn from_checkpoint(ckpt: ClassifierCheckpoint, external: Option<&EmbeddingTable>) -> Result<Self> {
        Ok(ClassifierModel {
            table: ckpt.embedding.resolve(external)?,
            base_hash: ckpt.embedding.base_hash,
            labels: ckpt.labels,
            max_tokens: ckpt.config.max_tokens,
            params: ckpt.params,
        })
    }
}

/// Why one code was assigned: the focus sentence and, for attention
/// variants, its token weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub sentence_index: usize,
    /// Char offsets of the sentence in the report text.
    pub start: usize,
    pub end: usize,
    pub sentence: String,
    /// Tokens seen by the classifier (after truncation).
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<f64>>,
    pub code: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub schema_version: u32,
    pub report_id: String,
    /// Sorted, distinct.
    pub codes: Vec<String>,
    pub evidence: Vec<Evidence>,
    /// True when no sentence was tagged focus and the most probable one
    /// was used instead.
    pub fallback: bool,
}

impl Prediction {
    pub fn codeset(&self) -> BTreeSet<String> {
        self.codes.iter().cloned().collect()
    }
}

/// Index of the sentence with the highest focus probability; ties go to
/// the lowest index.
pub fn fallback_focus(tagged: &TaggedReport) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &p) in tagged.focus_prob.iter().enumerate() {
        if best.is_none_or(|(_, b)| p > b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("cannot pick a fallback sentence in an empty report"))
}

/// Sentences to classify: the tagged focus sentences, or the single
/// fallback sentence when there are none.
pub fn focus_sentences(tagged: &TaggedReport) -> Result<(Vec<usize>, bool)> {
    let focus: Vec<usize> = tagged
        .tags
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == 1)
        .map(|(i, _)| i)
        .collect();
    if focus.is_empty() {
        Ok((vec![fallback_focus(tagged)?], true))
    } else {
        Ok((focus, false))
    }
}

pub fn check_compatible(tagger: &TaggerModel, classifier: &ClassifierModel) -> Result<()> {
    if tagger.base_hash != classifier.base_hash {
        return Err(Error::config(format!(
            "tagger and classifier were trained with different embedding tables ({} vs {})",
            tagger.base_hash, classifier.base_hash
        )));
    }
    Ok(())
}

pub fn predict_codeset(report: &Report, tagger: &TaggerModel, classifier: &ClassifierModel) -> Result<Prediction> {
    check_compatible(tagger, classifier)?;
    let prepared = prepare_report(report);
    if prepared.sentences.is_empty() {
        return Err(Error::invalid(format!("report {} has no sentences", report.id)));
    }
    let tagged = tag_report(&prepared, &tagger.params, &tagger.table)?;
    let (focus, fallback) = focus_sentences(&tagged)?;
    let mut evidence = Vec::with_capacity(focus.len());
    let mut codes = BTreeSet::new();
    for i in focus {
        let words = prepared.sentence_words(i);
        let n = words.len().min(classifier.max_tokens);
        let out = classify(
            &words[..n],
            &prepared.r4v,
            &classifier.params,
            &classifier.table,
            classifier.max_tokens,
        )?;
        let k = out.argmax();
        let code = classifier.labels.code(k).to_string();
        codes.insert(code.clone());
        let s = &prepared.sentences[i];
        evidence.push(Evidence {
            sentence_index: i,
            start: s.start,
            end: s.end,
            sentence: s.text.clone(),
            tokens: words[..n].to_vec(),
            attention: out.attention,
            code,
            probability: out.probs[k],
        });
    }
    Ok(Prediction {
        schema_version: PREDICTION_SCHEMA_VERSION,
        report_id: report.id.clone(),
        codes: codes.into_iter().collect(),
        evidence,
        fallback,
    })
}

/// Highlight level 0..=4 of each token, relative to the sentence's
/// largest attention weight.
pub fn heat_levels(attention: &[f64]) -> Vec<u8> {
    let max = attention.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![0; attention.len()];
    }
    attention
        .iter()
        .map(|&a| {
            let r = a / max;
            if r >= 0.75 {
                4
            } else if r >= 0.5 {
                3
            } else if r >= 0.25 {
                2
            } else if r > 0.05 {
                1
            } else {
                0
            }
        })
        .collect()
}

fn evidence_for<'a>(p: &'a Prediction, code: &'a str) -> impl Iterator<Item = &'a Evidence> {
    p.evidence.iter().filter(move |e| e.code == code)
}

/// Plain-text explanation: one block per code listing its focus
/// sentences and, for attention models, the weight of every token.
pub fn explain_text(p: &Prediction, report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "report {}", report.id);
    if !report.r4v.is_empty() {
        let _ = writeln!(out, "reason for visit: {}", report.r4v);
    }
    if p.fallback {
        let _ = writeln!(out, "no sentence was tagged focus; using the most probable one");
    }
    for code in &p.codes {
        let _ = writeln!(out, "\n[{code}]");
        for e in evidence_for(p, code) {
            let _ = writeln!(
                out,
                "  sentence {} (p = {:.3}): {}",
                e.sentence_index, e.probability, e.sentence
            );
            if let Some(att) = &e.attention {
                let heat = heat_levels(att);
                let line: Vec<String> = e
                    .tokens
                    .iter()
                    .zip(att)
                    .zip(&heat)
                    .map(|((t, a), &h)| format!("{t}{}{a:.2}", if h == 4 { "*" } else { ":" }))
                    .collect();
                let _ = writeln!(out, "    attention: {}", line.join(" "));
            }
        }
    }
    out
}

pub fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto}\
.code{border:1px solid #ccc;padding:.5em 1em;margin:1em 0}\
.focus{background:#fff3b0}\
.heat-0{}.heat-1{background:#fde0dd}.heat-2{background:#fa9fb5}\
.heat-3{background:#f768a1}.heat-4{background:#c51b8a;color:#fff}";

/// HTML explanation: per code, the report's sentences with the focus
/// sentences highlighted and their tokens shaded by attention.
pub fn explain_html(p: &Prediction, report: &Report) -> String {
    let prepared = prepare_report(report);
    let mut out = String::new();
    let id = html_escape(&report.id);
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{id}</title><style>{STYLE}</style></head><body>\n<h1>Report {id}</h1>\n"
    );
    if !report.r4v.is_empty() {
        let _ = writeln!(out, "<p class=\"r4v\">Reason for visit: {}</p>", html_escape(&report.r4v));
    }
    if p.fallback {
        let _ = writeln!(out, "<p class=\"fallback\">No sentence was tagged focus; the most probable sentence is shown.</p>");
    }
    for code in &p.codes {
        let _ = writeln!(out, "<div class=\"code\"><h2>{}</h2>", html_escape(code));
        let ev: Vec<&Evidence> = evidence_for(p, code).collect();
        out.push_str("<p>");
        for (i, s) in prepared.sentences.iter().enumerate() {
            match ev.iter().find(|e| e.sentence_index == i) {
                None => {
                    let _ = write!(out, "<span class=\"sentence\">{}</span> ", html_escape(&s.text));
                }
                Some(e) => {
                    let _ = write!(
                        out,
                        "<span class=\"sentence focus\" data-sentence=\"{i}\" title=\"p = {:.3}\">",
                        e.probability
                    );
                    match &e.attention {
                        Some(att) => {
                            let heat = heat_levels(att);
                            let shown: Vec<String> = e
                                .tokens
                                .iter()
                                .zip(att)
                                .zip(&heat)
                                .map(|((t, a), h)| {
                                    format!(
                                        "<span class=\"token heat-{h}\" title=\"{a:.3}\">{}</span>",
                                        html_escape(t)
                                    )
                                })
                                .collect();
                            out.push_str(&shown.join(" "));
                        }
                        None => out.push_str(&html_escape(&s.text)),
                    }
                    out.push_str("</span> ");
                }
            }
        }
        out.push_str("</p></div>\n");
    }
    out.push_str("</body></html>\n");
    out
}

/// File-system-safe name derived from a report id.
pub fn explanation_file_name(report_id: &str) -> String {
    let safe: String = report_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    let safe = safe.trim_start_matches('.');
    format!("{}.html", if safe.is_empty() { "_" } else { safe })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(tags: Vec<u8>, focus_prob: Vec<f64>) -> TaggedReport {
        TaggedReport { tags, focus_prob }
    }

    #[test]
    fn fallback_argmax_and_ties() {
        assert_eq!(fallback_focus(&tagged(vec![0; 3], vec![0.1, 0.4, 0.2])).unwrap(), 1);
        assert_eq!(fallback_focus(&tagged(vec![0; 2], vec![0.3, 0.3])).unwrap(), 0);
        assert_eq!(fallback_focus(&tagged(vec![0], vec![0.01])).unwrap(), 0);
        assert!(fallback_focus(&tagged(vec![], vec![])).is_err());
    }

    #[test]
    fn focus_sentences_prefers_tags() {
        assert_eq!(focus_sentences(&tagged(vec![0, 1, 1], vec![0.9, 0.6, 0.7])).unwrap(), (vec![1, 2], false));
        assert_eq!(focus_sentences(&tagged(vec![0, 0], vec![0.2, 0.4])).unwrap(), (vec![1], true));
    }

    #[test]
    fn heat_levels_relative_to_max() {
        assert_eq!(heat_levels(&[0.4, 0.38, 0.1, 0.06, 0.01]), vec![4, 4, 2, 1, 0]);
        assert_eq!(heat_levels(&[0.0, 0.0]), vec![0, 0]);
    }

    fn evidence(i: usize, code: &str, attention: Option<Vec<f64>>) -> Evidence {
        Evidence {
            sentence_index: i,
            start: 0,
            end: 0,
            sentence: format!("s{i}"),
            tokens: vec!["melanocytic".into(), "nevus".into(), "of".into(), "skin".into()],
            attention,
            code: code.into(),
            probability: 0.9,
        }
    }

    #[test]
    fn html_marks_top_tokens_strongest() {
        let report = Report::new("r<1>", "Melanocytic nevus of skin. Follow up.", "", vec![]);
        let p = Prediction {
            schema_version: 1,
            report_id: "r<1>".into(),
            codes: vec!["D22.5".into()],
            evidence: vec![evidence(0, "D22.5", Some(vec![0.45, 0.4, 0.05, 0.1]))],
            fallback: false,
        };
        let html = explain_html(&p, &report);
        assert!(html.contains("<span class=\"token heat-4\" title=\"0.450\">melanocytic</span>"));
        assert!(html.contains("<span class=\"token heat-4\" title=\"0.400\">nevus</span>"));
        assert!(html.contains("r&lt;1&gt;"));
        assert_eq!(html.matches("class=\"code\"").count(), 1);
        assert!(explain_text(&p, &report).contains("melanocytic*0.45"));
    }

    #[test]
    fn pooling_has_no_token_heat() {
        let report = Report::new("r", "Melanocytic nevus of skin.", "", vec![]);
        let p = Prediction {
            schema_version: 1,
            report_id: "r".into(),
            codes: vec!["D22.5".into()],
            evidence: vec![evidence(0, "D22.5", None)],
            fallback: false,
        };
        let html = explain_html(&p, &report);
        assert!(!html.contains("class=\"token"));
        assert!(html.contains("sentence focus"));
        assert!(!explain_text(&p, &report).contains("attention:"));
    }

    #[test]
    fn every_code_gets_a_block_with_a_sentence() {
        let report = Report::new("r", "A one. B two. C three.", "", vec![]);
        let p = Prediction {
            schema_version: 1,
            report_id: "r".into(),
            codes: vec!["X".into(), "Y".into()],
            evidence: vec![
                evidence(0, "X", None),
                evidence(1, "Y", None),
                evidence(2, "X", None),
            ],
            fallback: false,
        };
        let html = explain_html(&p, &report);
        let blocks: Vec<&str> = html.split("<div class=\"code\">").skip(1).collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].matches("sentence focus").count(), 2);
        assert_eq!(blocks[1].matches("sentence focus").count(), 1);
    }

    #[test]
    fn file_names_are_safe() {
        assert_eq!(explanation_file_name("r-1"), "r-1.html");
        assert_eq!(explanation_file_name("../x y"), "_x_y.html");
        assert_eq!(explanation_file_name(""), "_.html");
    }
}
