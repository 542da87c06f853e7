//! Corpus schema and level-specific training sets.
//!
//! A corpus is UTF-8 JSONL, one report per line:
//!
//! ```json
//! {"schema_version":1,"id":"r1","text":"...","r4v":"...",
//!  "annotations":[{"start":0,"end":12,"code":"C34.90"}],"codes":["C34.90"]}
//! ```
//!
//! Offsets are char offsets, 0-based, end-exclusive.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::text::{split_sentences, tokenize_at, tokenize_words, SentenceSpan, TokenSpan};

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub id: String,
    pub text: String,
    /// Reason-for-visit text.
    pub r4v: String,
    pub annotations: Vec<Annotation>,
    /// Gold codeset, sorted and unique.
    pub codes: Vec<String>,
}

impl Report {
    /// Builds a report whose codeset is derived from its annotations.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        r4v: impl Into<String>,
        annotations: Vec<Annotation>,
    ) -> Self {
        let codes: BTreeSet<String> = annotations.iter().map(|a| a.code.clone()).collect();
        Report {
            schema_version: CORPUS_SCHEMA_VERSION,
            id: id.into(),
            text: text.into(),
            r4v: r4v.into(),
            annotations,
            codes: codes.into_iter().collect(),
        }
    }

    pub fn codeset(&self) -> BTreeSet<String> {
        self.codes.iter().cloned().collect()
    }

    pub fn is_annotated(&self) -> bool {
        !self.annotations.is_empty()
    }

    /// Invariant violations of this record, as human-readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != CORPUS_SCHEMA_VERSION {
            out.push(format!(
                "unsupported schema_version {} (expected {CORPUS_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.id.is_empty() {
            out.push("empty id".into());
        }
        let len = self.text.chars().count();
        for a in &self.annotations {
            if a.start >= a.end || a.end > len {
                out.push(format!(
                    "annotation span [{}, {}) is invalid for a text of {len} chars",
                    a.start, a.end
                ));
            }
            if a.code.is_empty() {
                out.push("annotation with empty code".into());
            }
        }
        if self.codes.iter().any(|c| c.is_empty()) {
            out.push("empty gold code".into());
        }
        let set: BTreeSet<&String> = self.codes.iter().collect();
        if set.len() != self.codes.len() {
            out.push("duplicate gold codes".into());
        }
        if self.is_annotated() {
            let from_spans: BTreeSet<&String> = self.annotations.iter().map(|a| &a.code).collect();
            if from_spans != set {
                out.push(format!(
                    "gold codes {:?} differ from annotated codes {:?}",
                    set, from_spans
                ));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub reports: Vec<Report>,
    /// Free-form origin record (generator config and seed for synthetic
    /// corpora). Stored beside the corpus file, not inside it.
    pub provenance: Option<serde_json::Value>,
}

impl Corpus {
    pub fn new(reports: Vec<Report>) -> Self {
        Corpus {
            reports,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace::from_reports(&self.reports)
    }

    /// Checks every record and id uniqueness; all problems are reported
    /// together, each prefixed with its record id.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for r in &self.reports {
            if !seen.insert(r.id.as_str()) {
                problems.push(format!("{}: duplicate id", r.id));
            }
            for p in r.problems() {
                problems.push(format!("{}: {p}", r.id));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(problems.join("; ")))
        }
    }
}

pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut reports = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Report = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        reports.push(r);
    }
    let c = Corpus::new(reports);
    c.validate()?;
    Ok(c)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    read_corpus(BufReader::new(File::open(path.as_ref())?))
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    for r in &corpus.reports {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_corpus(corpus, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Ordered code list with a dense code ↔ id mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSpace {
    codes: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSpace {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(codes.len());
        for (i, c) in codes.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::invalid("empty code in label space"));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate code {c:?} in label space")));
            }
        }
        Ok(LabelSpace { codes, index })
    }

    /// Sorted union of the reports' gold codes.
    pub fn from_reports(reports: &[Report]) -> Self {
        let codes: BTreeSet<String> = reports.iter().flat_map(|r| r.codes.clone()).collect();
        LabelSpace::new(codes.into_iter().collect()).expect("codes are unique and non-empty")
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, id: usize) -> &str {
        &self.codes[id]
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }
}

impl Serialize for LabelSpace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.codes.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelSpace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let codes = Vec::<String>::deserialize(d)?;
        LabelSpace::new(codes).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Report>,
    pub validation: Vec<Report>,
    pub test: Vec<Report>,
}

/// Random report-level split. Sizes are `round(n·r_train)`,
/// `round(n·r_validation)` and the remainder.
pub fn split(reports: &[Report], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::invalid(format!("split ratios {ratios:?} must lie in [0, 1]")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios sum to {sum}, not 1")));
    }
    let n = reports.len();
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |ids: &[usize]| ids.iter().map(|&i| reports[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCode {
    pub code: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFilter {
    pub space: LabelSpace,
    pub min_count: usize,
    /// Number of training reports carrying each code.
    pub counts: BTreeMap<String, usize>,
    pub dropped: Vec<DroppedCode>,
}

/// Keeps codes carried by at least `min_count` training reports.
pub fn filter_labels(train: &[Report], min_count: usize) -> Result<LabelFilter> {
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in train {
        for c in r.codeset() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (code, &count) in &counts {
        if count >= min_count {
            kept.push(code.clone());
        } else {
            dropped.push(DroppedCode {
                code: code.clone(),
                count,
            });
        }
    }
    Ok(LabelFilter {
        space: LabelSpace::new(kept)?,
        min_count,
        counts,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    pub reports: Vec<Report>,
    /// Ids of reports left without any gold code.
    pub excluded: Vec<String>,
}

/// Removes codes outside `space` from gold sets and annotations. Reports
/// whose gold set becomes empty are excluded.
pub fn restrict_to_labels(reports: &[Report], space: &LabelSpace) -> Restricted {
    let mut kept = Vec::with_capacity(reports.len());
    let mut excluded = Vec::new();
    for r in reports {
        let mut r = r.clone();
        r.codes.retain(|c| space.contains(c));
        r.annotations.retain(|a| space.contains(&a.code));
        if r.codes.is_empty() {
            excluded.push(r.id);
        } else {
            kept.push(r);
        }
    }
    Restricted {
        reports: kept,
        excluded,
    }
}

/// A report split into sentences and tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedReport {
    pub id: String,
    pub sentences: Vec<SentenceSpan>,
    /// Tokens per sentence, with document-level offsets.
    pub tokens: Vec<Vec<TokenSpan>>,
    pub r4v: Vec<String>,
}

impl PreparedReport {
    pub fn sentence_words(&self, i: usize) -> Vec<String> {
        self.tokens[i].iter().map(|t| t.text.clone()).collect()
    }

    pub fn all_sentence_words(&self) -> Vec<Vec<String>> {
        (0..self.sentences.len()).map(|i| self.sentence_words(i)).collect()
    }
}

pub fn prepare_report(report: &Report) -> PreparedReport {
    let sentences = split_sentences(&report.text);
    let tokens = sentences
        .iter()
        .map(|s| tokenize_at(&s.text, s.start))
        .collect();
    PreparedReport {
        id: report.id.clone(),
        sentences,
        tokens,
        r4v: tokenize_words(&report.r4v),
    }
}

/// One report as a tagger training sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerExample {
    pub report_id: String,
    pub sentences: Vec<Vec<String>>,
    pub r4v: Vec<String>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggerDataset {
    pub examples: Vec<TaggerExample>,
    /// Reports with gold codes but no span annotations.
    pub unannotated: Vec<String>,
    /// Reports without any sentence.
    pub empty: Vec<String>,
    /// Annotations overlapping more than one sentence.
    pub boundary_crossings: usize,
}

/// Focus label per sentence: 1 iff some annotation overlaps it.
pub fn focus_labels(sentences: &[SentenceSpan], annotations: &[Annotation]) -> (Vec<u8>, usize) {
    let mut labels = vec![0u8; sentences.len()];
    let mut crossings = 0;
    for a in annotations {
        let mut hits = 0;
        for (l, s) in labels.iter_mut().zip(sentences) {
            if a.overlaps(s.start, s.end) {
                *l = 1;
                hits += 1;
            }
        }
        if hits > 1 {
            crossings += 1;
        }
    }
    (labels, crossings)
}

pub fn build_tagger_dataset(reports: &[Report]) -> Result<TaggerDataset> {
    let mut ds = TaggerDataset::default();
    for r in reports {
        if !r.is_annotated() && !r.codes.is_empty() {
            ds.unannotated.push(r.id.clone());
            continue;
        }
        let p = prepare_report(r);
        if p.sentences.is_empty() {
            ds.empty.push(r.id.clone());
            continue;
        }
        let (labels, crossings) = focus_labels(&p.sentences, &r.annotations);
        if crossings > 0 {
            log::warn!("{}: {crossings} annotation(s) span a sentence boundary", r.id);
        }
        ds.boundary_crossings += crossings;
        ds.examples.push(TaggerExample {
            report_id: r.id.clone(),
            sentences: p.all_sentence_words(),
            r4v: p.r4v,
            labels,
        });
    }
    if !reports.is_empty() && ds.examples.is_empty() {
        return Err(Error::data(format!(
            "no report carries span annotations ({} without annotations), so there are no focus labels",
            ds.unannotated.len()
        )));
    }
    if !ds.unannotated.is_empty() {
        log::warn!(
            "{} report(s) have codes but no span annotations and were skipped",
            ds.unannotated.len()
        );
    }
    Ok(ds)
}

/// One classifier training row: a focus sentence and its single code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRecord {
    pub report_id: String,
    pub sentence_index: usize,
    pub tokens: Vec<String>,
    /// 1 for tokens overlapping an annotated span.
    pub attention: Vec<u8>,
    pub r4v: Vec<String>,
    pub code: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassifierDataset {
    pub records: Vec<ClassifierRecord>,
    /// `(report id, sentence index)` of focus sentences carrying more than
    /// one distinct code.
    pub multi_code: Vec<(String, usize)>,
    /// Focus sentences where no token overlaps the annotation.
    pub no_target: Vec<(String, usize)>,
}

pub fn build_classifier_dataset(reports: &[Report]) -> ClassifierDataset {
    let mut ds = ClassifierDataset::default();
    for r in reports {
        if !r.is_annotated() {
            continue;
        }
        let p = prepare_report(r);
        for (i, s) in p.sentences.iter().enumerate() {
            let hits: Vec<&Annotation> = r
                .annotations
                .iter()
                .filter(|a| a.overlaps(s.start, s.end))
                .collect();
            if hits.is_empty() {
                continue;
            }
            let codes: BTreeSet<&str> = hits.iter().map(|a| a.code.as_str()).collect();
            if codes.len() > 1 {
                ds.multi_code.push((r.id.clone(), i));
                continue;
            }
            let attention: Vec<u8> = p.tokens[i]
                .iter()
                .map(|t| u8::from(hits.iter().any(|a| a.overlaps(t.start, t.end))))
                .collect();
            if attention.iter().all(|&a| a == 0) {
                ds.no_target.push((r.id.clone(), i));
                continue;
            }
            ds.records.push(ClassifierRecord {
                report_id: r.id.clone(),
                sentence_index: i,
                tokens: p.sentence_words(i),
                attention,
                r4v: p.r4v.clone(),
                code: codes.into_iter().next().unwrap().to_string(),
            });
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(id: &str, text: &str, spans: &[(usize, usize, &str)]) -> Report {
        Report::new(
            id,
            text,
            "",
            spans.iter().map(|&(s, e, c)| Annotation::new(s, e, c)).collect(),
        )
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = read_corpus("".as_bytes()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn round_trip() {
        let c = Corpus::new(vec![
            report("a", "Benign nevus. No atypia.", &[(0, 12, "D22.5")]),
            report("b", "Lésion.", &[]),
        ]);
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn inverted_span_is_rejected() {
        let line = r#"{"schema_version":1,"id":"x","text":"abcdefghijklmnop","r4v":"","annotations":[{"start":10,"end":5,"code":"A"}],"codes":["A"]}"#;
        let err = read_corpus(line.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("x:"), "{err}");
    }

    #[test]
    fn malformed_line_has_line_number() {
        let good = serde_json::to_string(&report("a", "Text.", &[])).unwrap();
        let input = format!("{good}\n{{not json\n");
        assert!(matches!(read_corpus(input.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rs: Vec<Report> = (0..100).map(|i| report(&i.to_string(), "A.", &[])).collect();
        let s = split(&rs, [0.7, 0.15, 0.15], 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (70, 15, 15));
        assert_eq!(s, split(&rs, [0.7, 0.15, 0.15], 1).unwrap());
        assert!(split(&rs, [0.7, 0.2, 0.15], 1).is_err());
    }

    #[test]
    fn focus_labels_one_inside_second_sentence() {
        let text = "First one. Second has lung. Third. Fourth.";
        let r = report("a", text, &[(22, 26, "C34")]);
        let ds = build_tagger_dataset(&[r]).unwrap();
        assert_eq!(ds.examples[0].labels, vec![0, 1, 0, 0]);
    }

    #[test]
    fn multi_code_sentence_is_excluded() {
        let text = "Lung and skin. Other.";
        let r = report("a", text, &[(0, 4, "C34"), (9, 13, "D22")]);
        let ds = build_classifier_dataset(std::slice::from_ref(&r));
        assert!(ds.records.is_empty());
        assert_eq!(ds.multi_code, vec![("a".to_string(), 0)]);
        // the report still has a focus sentence for tagging
        assert_eq!(build_tagger_dataset(&[r]).unwrap().examples[0].labels, vec![1, 0]);
    }

    #[test]
    fn filter_threshold() {
        let mut rs = Vec::new();
        for i in 0..9 {
            rs.push(report(&format!("a{i}"), "Abc.", &[(0, 3, "A")]));
        }
        for i in 0..10 {
            rs.push(report(&format!("b{i}"), "Abc.", &[(0, 3, "B")]));
        }
        let f = filter_labels(&rs, 10).unwrap();
        assert_eq!(f.space.codes(), &["B".to_string()]);
        assert_eq!(f.dropped, vec![DroppedCode { code: "A".into(), count: 9 }]);
        let r = restrict_to_labels(&rs, &f.space);
        assert_eq!(r.reports.len(), 10);
        assert_eq!(r.excluded.len(), 9);
        let f1 = filter_labels(&rs, 1).unwrap();
        assert_eq!(f1.space, LabelSpace::from_reports(&rs));
    }
}
