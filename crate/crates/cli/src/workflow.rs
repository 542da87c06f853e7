//! Data preparation, training and evaluation steps shared by the commands
//! and the acceptance harness.

use std::collections::{BTreeMap, BTreeSet};

use hicd_core::baseline::{predict_br, train_br, BrModel};
use hicd_core::checkpoint::{BrCheckpoint, ClassifierCheckpoint, EmbeddingRecord, TaggerCheckpoint};
use hicd_core::classifier::{
    classify, evaluate_classifier, train_classifier, ClassifierConfig, ClassifierEval,
};
use hicd_core::data::{
    build_classifier_dataset, build_tagger_dataset, filter_labels, prepare_report,
    restrict_to_labels, split, ClassifierDataset, Corpus, LabelFilter, Report, Restricted,
    TaggerDataset,
};
use hicd_core::embedding::EmbeddingTable;
use hicd_core::metrics::{
    multiclass_metrics, multilabel_metrics, Codeset, MulticlassMetrics, MultilabelMetrics,
    PredictionSet,
};
use hicd_core::pipeline::{
    predict_codeset, ClassifierModel, Evidence, Prediction, TaggerModel, PREDICTION_SCHEMA_VERSION,
};
use hicd_core::tagger::{tagger_macro_f1, train_tagger};
use hicd_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    All,
    Train,
    Validation,
    Test,
}

/// A corpus split under a run configuration, with label filtering applied.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub filter: LabelFilter,
    /// Raw splits. The tagger trains on these: focus labeling does not
    /// depend on which codes survive filtering.
    pub raw: [Vec<Report>; 3],
    /// Splits with filtered codes removed from gold sets and annotations;
    /// reports left without codes are dropped.
    pub restricted: [Restricted; 3],
}

impl Experiment {
    pub fn new(corpus: &Corpus, config: &RunConfig) -> Result<Self> {
        let s = split(&corpus.reports, config.split, config.seed)?;
        let filter = filter_labels(&s.train, config.min_label_count)?;
        for d in &filter.dropped {
            log::info!(
                "dropping code {} ({} training report(s) < {})",
                d.code,
                d.count,
                config.min_label_count
            );
        }
        let restricted = [
            restrict_to_labels(&s.train, &filter.space),
            restrict_to_labels(&s.validation, &filter.space),
            restrict_to_labels(&s.test, &filter.space),
        ];
        for (name, r) in ["train", "validation", "test"].iter().zip(&restricted) {
            if !r.excluded.is_empty() {
                log::warn!(
                    "{} {name} report(s) have no code left after label filtering and are excluded",
                    r.excluded.len()
                );
            }
        }
        Ok(Experiment {
            filter,
            raw: [s.train, s.validation, s.test],
            restricted,
        })
    }

    pub fn train(&self) -> &[Report] {
        &self.restricted[0].reports
    }

    pub fn validation(&self) -> &[Report] {
        &self.restricted[1].reports
    }

    pub fn test(&self) -> &[Report] {
        &self.restricted[2].reports
    }

    pub fn raw(&self, name: SplitName) -> Vec<Report> {
        match name {
            SplitName::All => self.raw.concat(),
            SplitName::Train => self.raw[0].clone(),
            SplitName::Validation => self.raw[1].clone(),
            SplitName::Test => self.raw[2].clone(),
        }
    }

    /// Gold reports of a split as evaluation sees them.
    pub fn gold(&self, name: SplitName) -> Vec<Report> {
        match name {
            SplitName::All => self
                .restricted
                .iter()
                .flat_map(|r| r.reports.iter().cloned())
                .collect(),
            SplitName::Train => self.train().to_vec(),
            SplitName::Validation => self.validation().to_vec(),
            SplitName::Test => self.test().to_vec(),
        }
    }
}

/// Embedding table for training plus whether checkpoints must store it.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    pub table: EmbeddingTable,
    pub store: bool,
}

impl TrainingTable {
    /// `external` when given; otherwise a seeded random table over the
    /// training vocabulary, which checkpoints then carry.
    pub fn resolve(external: Option<EmbeddingTable>, train: &[Report], config: &RunConfig) -> Result<Self> {
        if let Some(table) = external {
            return Ok(TrainingTable { table, store: false });
        }
        let mut words = BTreeSet::new();
        for r in train {
            let p = prepare_report(r);
            words.extend(p.all_sentence_words().into_iter().flatten());
            words.extend(p.r4v);
        }
        let words: Vec<String> = words.into_iter().collect();
        log::info!(
            "no embedding table given; initializing {} words at dimension {} from seed {}",
            words.len(),
            config.embedding_dim,
            config.seed
        );
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let table = EmbeddingTable::random(&words, config.embedding_dim, &mut rng)?;
        Ok(TrainingTable { table, store: true })
    }
}

fn tagger_data(reports: &[Report]) -> Result<TaggerDataset> {
    build_tagger_dataset(reports)
}

pub fn train_tagger_level(
    exp: &Experiment,
    table: &TrainingTable,
    config: &RunConfig,
) -> Result<(TaggerCheckpoint, Value)> {
    let train = tagger_data(&exp.raw[0])?;
    let validation = if exp.raw[1].is_empty() {
        TaggerDataset::default()
    } else {
        tagger_data(&exp.raw[1])?
    };
    log::info!(
        "tagger data: {} training and {} validation reports",
        train.examples.len(),
        validation.examples.len()
    );
    let t = train_tagger(&train.examples, &validation.examples, &table.table, &config.tagger)?;
    let used = t.embeddings.clone().unwrap_or_else(|| table.table.clone());
    let train_f1 = tagger_macro_f1(&t.params, &used, &train.examples)?;
    let val_f1 = if validation.examples.is_empty() {
        None
    } else {
        Some(tagger_macro_f1(&t.params, &used, &validation.examples)?)
    };
    let metrics = json!({
        "kind": "tagger",
        "train": {"reports": train.examples.len(), "macro_f1": train_f1},
        "validation": {"reports": validation.examples.len(), "macro_f1": val_f1},
        "best_epoch": t.best_epoch,
        "class_weights": t.class_weights,
        "loss_trace": t.loss_trace,
        "validation_macro_f1_trace": finite_or_null(&t.val_macro_f1_trace),
        "skipped": {
            "unannotated": train.unannotated.len() + validation.unannotated.len(),
            "empty": train.empty.len() + validation.empty.len(),
        },
        "boundary_crossings": train.boundary_crossings + validation.boundary_crossings,
    });
    let ckpt = TaggerCheckpoint {
        embedding: EmbeddingRecord::new(&table.table, t.embeddings.as_ref(), table.store),
        params: t.params,
        class_weights: t.class_weights,
        config: config.tagger.clone(),
        best_epoch: t.best_epoch,
    };
    Ok((ckpt, metrics))
}

fn finite_or_null(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

/// Classifier records of each restricted split.
pub struct ClassifierData {
    pub train: ClassifierDataset,
    pub validation: ClassifierDataset,
    pub test: ClassifierDataset,
}

impl ClassifierData {
    pub fn new(exp: &Experiment) -> Result<Self> {
        let d = ClassifierData {
            train: build_classifier_dataset(exp.train()),
            validation: build_classifier_dataset(exp.validation()),
            test: build_classifier_dataset(exp.test()),
        };
        if d.train.records.is_empty() {
            return Err(Error::Data(
                "the training split has no annotated focus sentence; the classifier needs span annotations".into(),
            ));
        }
        let multi = d.train.multi_code.len() + d.validation.multi_code.len() + d.test.multi_code.len();
        if multi > 0 {
            log::info!("{multi} focus sentence(s) carry several codes and are excluded from classifier data");
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifierSummary {
    pub train: ClassifierEval,
    pub validation: Option<ClassifierEval>,
    pub test: Option<ClassifierEval>,
}

fn eval_block(e: &ClassifierEval) -> Value {
    json!({
        "records": e.records,
        "accuracy": e.accuracy,
        "mean_attention_loss": e.mean_attention_loss,
        "mean_trigger_mass": e.mean_trigger_mass,
    })
}

pub fn train_classifier_level(
    exp: &Experiment,
    data: &ClassifierData,
    table: &TrainingTable,
    config: &ClassifierConfig,
) -> Result<(ClassifierCheckpoint, ClassifierSummary, Value)> {
    let labels = &exp.filter.space;
    let t = train_classifier(
        &data.train.records,
        &data.validation.records,
        labels,
        &table.table,
        config,
    )?;
    let used = t.embeddings.clone().unwrap_or_else(|| table.table.clone());
    let eval = |records: &[hicd_core::data::ClassifierRecord]| -> Result<Option<ClassifierEval>> {
        if records.is_empty() {
            return Ok(None);
        }
        evaluate_classifier(&t.params, &used, labels, records, config.max_tokens).map(Some)
    };
    let summary = ClassifierSummary {
        train: eval(&data.train.records)?.expect("training records are non-empty"),
        validation: eval(&data.validation.records)?,
        test: eval(&data.test.records)?,
    };
    let metrics = json!({
        "kind": "classifier",
        "variant": config.variant,
        "lambda": config.lambda,
        "labels": labels.len(),
        "dropped_codes": exp.filter.dropped,
        "train": eval_block(&summary.train),
        "validation": summary.validation.as_ref().map(eval_block),
        "test": summary.test.as_ref().map(eval_block),
        "best_epoch": t.best_epoch,
        "jc_trace": t.jc_trace,
        "ja_trace": t.ja_trace,
        "validation_accuracy_trace": finite_or_null(&t.val_accuracy_trace),
        "excluded_multi_code_sentences": data.train.multi_code.len() + data.validation.multi_code.len() + data.test.multi_code.len(),
    });
    let ckpt = ClassifierCheckpoint {
        embedding: EmbeddingRecord::new(&table.table, t.embeddings.as_ref(), table.store),
        params: t.params,
        labels: labels.clone(),
        config: config.clone(),
        best_epoch: t.best_epoch,
    };
    Ok((ckpt, summary, metrics))
}

pub fn baseline_metrics(model: &BrModel, reports: &[Report]) -> Result<Option<MultilabelMetrics>> {
    if reports.is_empty() {
        return Ok(None);
    }
    let preds: Vec<Prediction> = reports.iter().map(|r| baseline_prediction(r, model)).collect();
    evaluate_multilabel(&preds, reports).map(Some)
}

pub fn train_baseline_level(exp: &Experiment, config: &RunConfig) -> Result<(BrCheckpoint, Value)> {
    let model = train_br(exp.train(), &exp.filter.space, &config.baseline)?;
    let metrics = json!({
        "kind": "binary-relevance",
        "labels": exp.filter.space.len(),
        "features": model.vocab.len(),
        "absent_labels": model.absent,
        "train": baseline_metrics(&model, exp.train())?,
        "validation": baseline_metrics(&model, exp.validation())?,
    });
    Ok((
        BrCheckpoint {
            model,
            config: config.baseline.clone(),
        },
        metrics,
    ))
}

pub fn baseline_prediction(report: &Report, model: &BrModel) -> Prediction {
    Prediction {
        schema_version: PREDICTION_SCHEMA_VERSION,
        report_id: report.id.clone(),
        codes: predict_br(report, model).into_iter().collect(),
        evidence: Vec::new(),
        fallback: false,
    }
}

pub fn predict_reports(
    reports: &[Report],
    tagger: &TaggerModel,
    classifier: &ClassifierModel,
) -> Result<Vec<Prediction>> {
    reports
        .iter()
        .map(|r| predict_codeset(r, tagger, classifier))
        .collect()
}

/// Classifies the gold focus sentences directly, bypassing the tagger.
/// Reports without classifier records are skipped.
pub fn predict_gold_focus(reports: &[Report], classifier: &ClassifierModel) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for r in reports {
        let ds = build_classifier_dataset(std::slice::from_ref(r));
        if ds.records.is_empty() {
            log::warn!("{}: no gold focus sentence with a single code; skipped", r.id);
            continue;
        }
        let p = prepare_report(r);
        let mut codes = BTreeSet::new();
        let mut evidence = Vec::with_capacity(ds.records.len());
        for rec in &ds.records {
            let n = rec.tokens.len().min(classifier.max_tokens);
            let o = classify(
                &rec.tokens[..n],
                &rec.r4v,
                &classifier.params,
                &classifier.table,
                classifier.max_tokens,
            )?;
            let k = o.argmax();
            let code = classifier.labels.code(k).to_string();
            codes.insert(code.clone());
            let s = &p.sentences[rec.sentence_index];
            evidence.push(Evidence {
                sentence_index: rec.sentence_index,
                start: s.start,
                end: s.end,
                sentence: s.text.clone(),
                tokens: rec.tokens[..n].to_vec(),
                attention: o.attention,
                code,
                probability: o.probs[k],
            });
        }
        out.push(Prediction {
            schema_version: PREDICTION_SCHEMA_VERSION,
            report_id: r.id.clone(),
            codes: codes.into_iter().collect(),
            evidence,
            fallback: false,
        });
    }
    Ok(out)
}

fn index_predictions(predictions: &[Prediction]) -> Result<BTreeMap<&str, &Prediction>> {
    let mut by_id = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.report_id.as_str(), p).is_some() {
            return Err(Error::Data(format!("report {} is predicted more than once", p.report_id)));
        }
    }
    Ok(by_id)
}

fn list_ids<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let ids: Vec<&str> = ids.collect();
    const SHOWN: usize = 20;
    let mut s = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} in total)", ids.len()));
    }
    s
}

/// Ids of predictions that are not in `gold`, and of gold reports
/// without a prediction.
fn id_mismatch(predicted: &BTreeSet<&str>, gold: &BTreeSet<&str>) -> Result<()> {
    let unknown: Vec<&str> = predicted.difference(gold).copied().collect();
    let missing: Vec<&str> = gold.difference(predicted).copied().collect();
    if unknown.is_empty() && missing.is_empty() {
        return Ok(());
    }
    let mut parts = Vec::new();
    if !unknown.is_empty() {
        parts.push(format!("predicted but not in gold: {}", list_ids(unknown.into_iter())));
    }
    if !missing.is_empty() {
        parts.push(format!("in gold but not predicted: {}", list_ids(missing.into_iter())));
    }
    Err(Error::Data(format!("prediction and gold ids differ; {}", parts.join("; "))))
}

/// End-to-end codeset metrics. Ids must match exactly.
pub fn evaluate_multilabel(predictions: &[Prediction], gold: &[Report]) -> Result<MultilabelMetrics> {
    let by_id = index_predictions(predictions)?;
    let gold_ids: BTreeSet<&str> = gold.iter().map(|r| r.id.as_str()).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::Data("gold corpus has duplicate report ids".into()));
    }
    id_mismatch(&by_id.keys().copied().collect(), &gold_ids)?;
    let pairs: Vec<(Codeset, Codeset)> = gold
        .iter()
        .map(|r| (by_id[r.id.as_str()].codeset(), r.codeset()))
        .collect();
    multilabel_metrics(&PredictionSet::new(pairs).map_err(|e| Error::Data(e.to_string()))?)
}

/// Sentence-level classifier metrics over the gold focus sentences.
/// Every gold classifier record needs matching evidence.
pub fn evaluate_multiclass(predictions: &[Prediction], gold: &[Report]) -> Result<MulticlassMetrics> {
    let by_id = index_predictions(predictions)?;
    let records = build_classifier_dataset(gold).records;
    if records.is_empty() {
        return Err(Error::Data(
            "the gold corpus has no annotated single-code focus sentence to evaluate".into(),
        ));
    }
    let mut predicted = Vec::with_capacity(records.len());
    let mut gold_codes = Vec::with_capacity(records.len());
    let mut missing = Vec::new();
    for rec in &records {
        let hit = by_id.get(rec.report_id.as_str()).and_then(|p| {
            p.evidence
                .iter()
                .find(|e| e.sentence_index == rec.sentence_index)
        });
        match hit {
            Some(e) => {
                predicted.push(e.code.clone());
                gold_codes.push(rec.code.clone());
            }
            None => missing.push(format!("{}#{}", rec.report_id, rec.sentence_index)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "no prediction for gold focus sentence(s) {}; multiclass evaluation expects predictions made with --gold-focus",
            list_ids(missing.iter().map(String::as_str))
        )));
    }
    multiclass_metrics(&PredictionSet::from_labels(&predicted, &gold_codes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hicd_core::annotation::Annotation;

    fn gold(id: &str, codes: &[&str]) -> Report {
        let mut r = Report::new(id, "Some text here.", "", vec![]);
        r.codes = codes.iter().map(|c| c.to_string()).collect();
        r
    }

    fn pred(id: &str, codes: &[&str]) -> Prediction {
        Prediction {
            schema_version: 1,
            report_id: id.into(),
            codes: codes.iter().map(|c| c.to_string()).collect(),
            evidence: vec![],
            fallback: false,
        }
    }

    #[test]
    fn perfect_multilabel_is_one() {
        let g = vec![gold("a", &["X"]), gold("b", &["X", "Y"])];
        let m = evaluate_multilabel(&[pred("b", &["X", "Y"]), pred("a", &["X"])], &g).unwrap();
        assert_eq!(m.subset_accuracy, 1.0);
        assert_eq!(m.micro.f1, 1.0);
        assert_eq!(m.instance.f1, 1.0);
    }

    #[test]
    fn id_mismatch_lists_ids() {
        let g = vec![gold("a", &["X"]), gold("b", &["X"])];
        let e = evaluate_multilabel(&[pred("a", &["X"]), pred("zz", &["X"])], &g).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Data(_)));
        assert!(msg.contains("zz") && msg.contains("b"), "{msg}");
        let e = evaluate_multilabel(&[pred("a", &["X"]), pred("a", &["X"])], &g[..1]).unwrap_err();
        assert!(e.to_string().contains("more than once"));
    }

    #[test]
    fn multiclass_needs_gold_focus_evidence() {
        let text = "Melanocytic nevus of skin. Nothing else.";
        let mut r = Report::new("r", text, "", vec![Annotation::new(0, 17, "D22.5")]);
        r.codes = vec!["D22.5".into()];
        let e = evaluate_multiclass(&[pred("r", &["D22.5"])], &[r.clone()]).unwrap_err();
        assert!(e.to_string().contains("r#0"));
        let mut p = pred("r", &["D22.5"]);
        p.evidence.push(Evidence {
            sentence_index: 0,
            start: 0,
            end: 26,
            sentence: "Melanocytic nevus of skin.".into(),
            tokens: vec![],
            attention: None,
            code: "D22.5".into(),
            probability: 1.0,
        });
        let m = evaluate_multiclass(&[p], &[r]).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.instances, 1);
    }
}
