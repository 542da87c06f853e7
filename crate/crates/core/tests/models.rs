//! Gradient checks over many seeds, toy training runs, and trained models
//! surviving a checkpoint file.

use hicd_core::checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, ClassifierCheckpoint, EmbeddingRecord,
    TaggerCheckpoint,
};
use hicd_core::classifier::{train_classifier, ClassifierConfig, Variant};
use hicd_core::data::{build_classifier_dataset, build_tagger_dataset, filter_labels, split};
use hicd_core::pipeline::{predict_codeset, ClassifierModel, TaggerModel};
use hicd_core::selftest::{
    check_classifier_gradients, check_layer_gradients, check_tagger_gradients, Fault,
};
use hicd_core::synthetic::{gen_synthetic, SyntheticBundle, SyntheticConfig};
use hicd_core::tagger::{train_tagger, TaggerConfig};

const SEEDS: u64 = 20;

#[test]
fn layer_gradients_match_finite_differences() {
    for check in check_layer_gradients(SEEDS) {
        assert!(check.passed, "{check}");
    }
}

#[test]
fn tagger_gradients_match_finite_differences() {
    let check = check_tagger_gradients(SEEDS, None);
    assert!(check.passed, "{check}");
    assert!(check.worst < 1e-4);
}

#[test]
fn classifier_gradients_match_for_every_variant() {
    for v in Variant::ALL {
        let check = check_classifier_gradients(v, SEEDS, None);
        assert!(check.passed, "{check}");
    }
}

#[test]
fn a_wrong_gradient_is_caught() {
    assert!(!check_tagger_gradients(3, Some(Fault::TaggerBackward)).passed);
    let v = Variant::default();
    assert!(!check_classifier_gradients(v, 3, Some(Fault::AttentionBackward)).passed);
}

fn small_bundle() -> SyntheticBundle {
    gen_synthetic(&SyntheticConfig {
        labels: 4,
        ambiguous_pairs: 0,
        reports: 240,
        embedding_dim: 16,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn toy_training_reduces_both_losses() {
    let b = small_bundle();
    let s = split(&b.corpus.reports, [0.8, 0.2, 0.0], 0).unwrap();
    let tr = build_tagger_dataset(&s.train).unwrap().examples;
    let t = train_tagger(
        &tr,
        &[],
        &b.embeddings,
        &TaggerConfig { hidden: 8, epochs: 6, ..Default::default() },
    )
    .unwrap();
    assert!(t.loss_trace.last().unwrap() < &t.loss_trace[0], "{:?}", t.loss_trace);

    let labels = filter_labels(&s.train, 1).unwrap().space;
    let records = build_classifier_dataset(&s.train).records;
    let c = train_classifier(
        &records,
        &[],
        &labels,
        &b.embeddings,
        &ClassifierConfig { hidden: 8, attention: 8, epochs: 6, ..Default::default() },
    )
    .unwrap();
    assert!(c.jc_trace.last().unwrap() < &c.jc_trace[0], "{:?}", c.jc_trace);
    assert!(c.ja_trace.last().unwrap() < &c.ja_trace[0], "{:?}", c.ja_trace);
}

#[test]
fn training_is_deterministic() {
    let b = small_bundle();
    let s = split(&b.corpus.reports, [0.8, 0.2, 0.0], 0).unwrap();
    let labels = filter_labels(&s.train, 1).unwrap().space;
    let records = build_classifier_dataset(&s.train).records;
    let cfg = ClassifierConfig { hidden: 6, attention: 6, epochs: 2, ..Default::default() };
    let a = train_classifier(&records, &[], &labels, &b.embeddings, &cfg).unwrap();
    let c = train_classifier(&records, &[], &labels, &b.embeddings, &cfg).unwrap();
    assert_eq!(a.params, c.params);
    assert_eq!(a.jc_trace, c.jc_trace);
}

#[test]
fn trained_models_predict_the_same_after_a_file_round_trip() {
    let b = small_bundle();
    let s = split(&b.corpus.reports, [0.8, 0.2, 0.0], 0).unwrap();
    let tagger_cfg = TaggerConfig { hidden: 8, epochs: 3, ..Default::default() };
    let tr = build_tagger_dataset(&s.train).unwrap().examples;
    let t = train_tagger(&tr, &[], &b.embeddings, &tagger_cfg).unwrap();
    let labels = filter_labels(&s.train, 1).unwrap().space;
    let clf_cfg = ClassifierConfig { hidden: 8, attention: 8, epochs: 3, ..Default::default() };
    let records = build_classifier_dataset(&s.train).records;
    let c = train_classifier(&records, &[], &labels, &b.embeddings, &clf_cfg).unwrap();

    let tagger_ckpt = TaggerCheckpoint {
        embedding: EmbeddingRecord::new(&b.embeddings, None, false),
        params: t.params,
        class_weights: t.class_weights,
        config: tagger_cfg,
        best_epoch: t.best_epoch,
    };
    let clf_ckpt = ClassifierCheckpoint {
        embedding: EmbeddingRecord::new(&b.embeddings, None, false),
        params: c.params,
        labels,
        config: clf_cfg,
        best_epoch: c.best_epoch,
    };
    let dir = tempfile::tempdir().unwrap();
    let (tp, cp) = (dir.path().join("t.ckpt"), dir.path().join("c.ckpt"));
    save_checkpoint(&Checkpoint::Tagger(tagger_ckpt.clone()), &serde_json::json!({}), &tp).unwrap();
    save_checkpoint(&Checkpoint::Classifier(clf_ckpt.clone()), &serde_json::json!({}), &cp).unwrap();
    let tagger_back = load_checkpoint(&tp).unwrap().0.into_tagger().unwrap();
    let clf_back = load_checkpoint(&cp).unwrap().0.into_classifier().unwrap();
    assert_eq!(tagger_back, tagger_ckpt);
    assert_eq!(clf_back, clf_ckpt);

    let e = Some(&b.embeddings);
    let before = (
        TaggerModel::from_checkpoint(tagger_ckpt, e).unwrap(),
        ClassifierModel::from_checkpoint(clf_ckpt, e).unwrap(),
    );
    let after = (
        TaggerModel::from_checkpoint(tagger_back, e).unwrap(),
        ClassifierModel::from_checkpoint(clf_back, e).unwrap(),
    );
    for r in &s.validation {
        assert_eq!(
            predict_codeset(r, &before.0, &before.1).unwrap(),
            predict_codeset(r, &after.0, &after.1).unwrap()
        );
    }
}
