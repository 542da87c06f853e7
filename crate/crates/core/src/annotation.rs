//! Coder span annotations: inter-annotator agreement and the two-coder
//! merge.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A coded character span, `[start, end)` in char offsets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub start: usize,
    pub end: usize,
    pub code: String,
}

impl Annotation {
    pub fn new(start: usize, end: usize, code: impl Into<String>) -> Self {
        Annotation {
            start,
            end,
            code: code.into(),
        }
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// One coder's annotations, keyed by document id.
pub type AnnotationSet = BTreeMap<String, Vec<Annotation>>;

fn same_documents(a: &AnnotationSet, b: &AnnotationSet) -> Result<()> {
    if a.keys().ne(b.keys()) {
        let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
        let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
        return Err(Error::invalid(format!(
            "annotation sets cover different documents (only first: {only_a:?}, only second: {only_b:?})"
        )));
    }
    Ok(())
}

fn codeset(spans: &[Annotation]) -> BTreeSet<&str> {
    spans.iter().map(|s| s.code.as_str()).collect()
}

/// Cohen's kappa over binary decisions, one per (document, code) pair,
/// where the codes are those used by either coder anywhere in the sets.
///
/// When chance agreement is already 1 (both coders say "yes" to every
/// item, or "no" to every item) kappa is defined as 1.
pub fn cohens_kappa(a: &AnnotationSet, b: &AnnotationSet) -> Result<f64> {
    same_documents(a, b)?;
    let codes: BTreeSet<&str> = a
        .values()
        .chain(b.values())
        .flat_map(|v| v.iter().map(|s| s.code.as_str()))
        .collect();
    let n = a.len() * codes.len();
    if n == 0 {
        return Err(Error::invalid("no (document, code) items to compare"));
    }
    let (mut agree, mut yes_a, mut yes_b) = (0usize, 0usize, 0usize);
    for (doc, spans_a) in a {
        let ca = codeset(spans_a);
        let cb = codeset(&b[doc]);
        for code in &codes {
            let (x, y) = (ca.contains(code), cb.contains(code));
            agree += usize::from(x == y);
            yes_a += usize::from(x);
            yes_b += usize::from(y);
        }
    }
    let n = n as f64;
    let p_o = agree as f64 / n;
    let (pa, pb) = (yes_a as f64 / n, yes_b as f64 / n);
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub merged: AnnotationSet,
    /// Documents with at least one span the two coders did not share.
    pub escalated: Vec<String>,
    /// Escalated documents the senior coder did not annotate. Their merged
    /// entry holds only the spans both coders agreed on.
    pub unresolved: Vec<String>,
}

/// Merges two coders' annotations.
///
/// For each code, spans of both coders that overlap (transitively) form a
/// group. A group containing spans from both coders is agreed and becomes
/// the union span. A group from only one coder is a disagreement, which
/// escalates the whole document to the senior coder's annotation.
pub fn merge_annotations(
    a: &AnnotationSet,
    b: &AnnotationSet,
    senior: Option<&AnnotationSet>,
) -> Result<MergeOutcome> {
    same_documents(a, b)?;
    let mut out = MergeOutcome::default();
    for (doc, spans_a) in a {
        let (agreed, disputed) = merge_document(spans_a, &b[doc]);
        if !disputed {
            out.merged.insert(doc.clone(), agreed);
            continue;
        }
        out.escalated.push(doc.clone());
        match senior.and_then(|s| s.get(doc)) {
            Some(s) => {
                let mut spans = s.clone();
                spans.sort();
                spans.dedup();
                out.merged.insert(doc.clone(), spans);
            }
            None => {
                out.unresolved.push(doc.clone());
                out.merged.insert(doc.clone(), agreed);
            }
        }
    }
    Ok(out)
}

fn merge_document(a: &[Annotation], b: &[Annotation]) -> (Vec<Annotation>, bool) {
    let mut by_code: BTreeMap<&str, Vec<(usize, usize, u8)>> = BTreeMap::new();
    for (who, spans) in [(1u8, a), (2u8, b)] {
        for s in spans {
            by_code
                .entry(s.code.as_str())
                .or_default()
                .push((s.start, s.end, who));
        }
    }
    let mut agreed = Vec::new();
    let mut disputed = false;
    for (code, mut spans) in by_code {
        spans.sort();
        let mut i = 0;
        while i < spans.len() {
            let (start, mut end, mut who) = spans[i];
            let mut j = i + 1;
            while j < spans.len() && spans[j].0 < end {
                end = end.max(spans[j].1);
                who |= spans[j].2;
                j += 1;
            }
            if who == 3 {
                agreed.push(Annotation::new(start, end, code));
            } else {
                disputed = true;
            }
            i = j;
        }
    }
    agreed.sort();
    (agreed, disputed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(docs: &[(&str, &[(usize, usize, &str)])]) -> AnnotationSet {
        docs.iter()
            .map(|(d, spans)| {
                (
                    d.to_string(),
                    spans.iter().map(|&(s, e, c)| Annotation::new(s, e, c)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn identical_sets_have_kappa_one() {
        let a = set(&[("d1", &[(0, 4, "A")]), ("d2", &[(1, 3, "B")]), ("d3", &[])]);
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn independent_coders_have_kappa_zero() {
        // 2x2 contingency table with one item per cell and 0.5 marginals.
        let a = set(&[("1", &[(0, 1, "A")]), ("2", &[(0, 1, "A")]), ("3", &[]), ("4", &[])]);
        let b = set(&[("1", &[(0, 1, "A")]), ("2", &[]), ("3", &[(0, 1, "A")]), ("4", &[])]);
        assert!(cohens_kappa(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kappa_rejects_different_documents() {
        let a = set(&[("1", &[(0, 1, "A")])]);
        let b = set(&[("2", &[(0, 1, "A")])]);
        assert!(cohens_kappa(&a, &b).is_err());
    }

    #[test]
    fn identical_spans_merge_to_themselves() {
        let a = set(&[("d", &[(5, 15, "A"), (20, 25, "B")])]);
        let m = merge_annotations(&a, &a, None).unwrap();
        assert_eq!(m.merged, a);
        assert!(m.escalated.is_empty());
    }

    #[test]
    fn partial_overlap_is_unioned() {
        let a = set(&[("d", &[(5, 15, "A")])]);
        let b = set(&[("d", &[(10, 20, "A")])]);
        let m = merge_annotations(&a, &b, None).unwrap();
        assert_eq!(m.merged["d"], vec![Annotation::new(5, 20, "A")]);
    }

    #[test]
    fn disagreement_goes_to_senior() {
        let a = set(&[("d", &[(5, 15, "A")])]);
        let b = set(&[("d", &[(30, 40, "B")])]);
        let senior = set(&[("d", &[(5, 15, "A")])]);
        let m = merge_annotations(&a, &b, Some(&senior)).unwrap();
        assert_eq!(m.merged["d"], vec![Annotation::new(5, 15, "A")]);
        assert_eq!(m.escalated, vec!["d".to_string()]);
        assert!(m.unresolved.is_empty());

        let m = merge_annotations(&a, &b, None).unwrap();
        assert_eq!(m.unresolved, vec!["d".to_string()]);
        assert!(m.merged["d"].is_empty());
    }

    #[test]
    fn cross_code_overlap_escalates() {
        let a = set(&[("d", &[(5, 15, "A")])]);
        let b = set(&[("d", &[(10, 20, "B")])]);
        let m = merge_annotations(&a, &b, None).unwrap();
        assert_eq!(m.escalated, vec!["d".to_string()]);
    }
}
