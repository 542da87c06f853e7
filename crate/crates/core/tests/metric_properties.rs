//! Metric invariants over random prediction sets, plus hand-worked cases.

use hicd_core::metrics::{
    instance_prf, multiclass_metrics, multilabel_metrics, per_label, prf, subset_accuracy,
    Average, Codeset, InstanceMode, PredictionSet,
};
use proptest::prelude::*;

const LABELS: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

fn codeset(mask: u8) -> Codeset {
    LABELS
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, l)| l.to_string())
        .collect()
}

fn cs(codes: &[&str]) -> Codeset {
    codes.iter().map(|s| s.to_string()).collect()
}

/// Up to 20 instances; gold masks are non-empty.
fn masks() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((0u8..64, 1u8..64), 1..=20)
}

fn build(m: &[(u8, u8)]) -> PredictionSet {
    PredictionSet::new(m.iter().map(|&(p, g)| (codeset(p), codeset(g))).collect()).unwrap()
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

proptest! {
    #[test]
    fn scores_lie_in_the_unit_interval(m in masks()) {
        let set = build(&m);
        let all = multilabel_metrics(&set).unwrap();
        for s in [all.micro, all.macro_, all.weighted, all.instance, all.instance_per_sample] {
            prop_assert!(in_unit(s.precision) && in_unit(s.recall) && in_unit(s.f1));
        }
        prop_assert!(in_unit(all.subset_accuracy));
    }

    #[test]
    fn micro_f1_lies_between_precision_and_recall(m in masks()) {
        let s = prf(&build(&m), Average::Micro).unwrap();
        let (lo, hi) = (s.precision.min(s.recall), s.precision.max(s.recall));
        prop_assert!(s.f1 >= lo - 1e-12 && s.f1 <= hi + 1e-12);
    }

    #[test]
    fn instance_order_does_not_matter(m in masks()) {
        let mut rev = m.clone();
        rev.reverse();
        let (a, b) = (multilabel_metrics(&build(&m)).unwrap(), multilabel_metrics(&build(&rev)).unwrap());
        prop_assert!((a.micro.f1 - b.micro.f1).abs() < 1e-12);
        prop_assert!((a.macro_.f1 - b.macro_.f1).abs() < 1e-12);
        prop_assert!((a.instance_per_sample.f1 - b.instance_per_sample.f1).abs() < 1e-12);
        prop_assert_eq!(a.subset_accuracy, b.subset_accuracy);
    }

    #[test]
    fn perfect_predictions_score_one(golds in prop::collection::vec(1u8..64, 1..=20)) {
        let m: Vec<(u8, u8)> = golds.iter().map(|&g| (g, g)).collect();
        let all = multilabel_metrics(&build(&m)).unwrap();
        for s in [all.micro, all.macro_, all.weighted, all.instance, all.instance_per_sample] {
            prop_assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
        prop_assert_eq!(all.subset_accuracy, 1.0);
    }

    #[test]
    fn exact_matches_bound_per_sample_f1(m in masks()) {
        let set = build(&m);
        let per_sample = instance_prf(&set, InstanceMode::PerSample).unwrap();
        prop_assert!(subset_accuracy(&set).unwrap() <= per_sample.f1 + 1e-12);
    }

    #[test]
    fn counts_add_up(m in masks()) {
        let set = build(&m);
        let stats = per_label(&set);
        let gold_total: usize = m.iter().map(|&(_, g)| g.count_ones() as usize).sum();
        let pred_total: usize = m.iter().map(|&(p, _)| p.count_ones() as usize).sum();
        prop_assert_eq!(stats.values().map(|s| s.support).sum::<usize>(), gold_total);
        prop_assert_eq!(stats.values().map(|s| s.tp + s.fp).sum::<usize>(), pred_total);
    }

    #[test]
    fn multiclass_micro_equals_accuracy(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..=20)) {
        let pred: Vec<&str> = pairs.iter().map(|&(p, _)| LABELS[p]).collect();
        let gold: Vec<&str> = pairs.iter().map(|&(_, g)| LABELS[g]).collect();
        let m = multiclass_metrics(&PredictionSet::from_labels(&pred, &gold).unwrap()).unwrap();
        prop_assert!((m.micro.f1 - m.accuracy).abs() < 1e-12);
        prop_assert!((m.micro.precision - m.micro.recall).abs() < 1e-12);
    }
}

#[test]
fn hand_worked_multilabel_case() {
    // A: tp 1, fp 1, fn 0. B: tp 0, fp 0, fn 1. C: tp 1, fp 0, fn 1.
    let set = PredictionSet::new(vec![
        (cs(&["A", "C"]), cs(&["A", "B", "C"])),
        (cs(&["A"]), cs(&["C"])),
    ])
    .unwrap();
    let micro = prf(&set, Average::Micro).unwrap();
    assert!((micro.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((micro.recall - 2.0 / 4.0).abs() < 1e-12);
    assert!((micro.f1 - 4.0 / 7.0).abs() < 1e-12);
    let macro_ = prf(&set, Average::Macro).unwrap();
    // per-label F1: A 2/3, B 0, C 2/3
    assert!((macro_.f1 - (4.0 / 3.0) / 3.0).abs() < 1e-12);
    let weighted = prf(&set, Average::Weighted).unwrap();
    // supports A 1, B 1, C 2
    assert!((weighted.f1 - (2.0 / 3.0 + 2.0 * (2.0 / 3.0)) / 4.0).abs() < 1e-12);
    assert_eq!(subset_accuracy(&set).unwrap(), 0.0);
    let per_sample = instance_prf(&set, InstanceMode::PerSample).unwrap();
    assert!((per_sample.f1 - (0.8 + 0.0) / 2.0).abs() < 1e-12);
}

#[test]
fn label_predicted_but_never_gold_counts_in_macro() {
    let set = PredictionSet::new(vec![(cs(&["A", "Z"]), cs(&["A"]))]).unwrap();
    let m = prf(&set, Average::Macro).unwrap();
    assert!((m.f1 - 0.5).abs() < 1e-12);
    // zero support: no weight
    assert_eq!(prf(&set, Average::Weighted).unwrap().f1, 1.0);
}

#[test]
fn empty_gold_and_empty_sets_are_rejected() {
    assert!(PredictionSet::new(vec![(cs(&["A"]), cs(&[]))]).is_err());
    assert!(subset_accuracy(&PredictionSet::default()).is_err());
}
