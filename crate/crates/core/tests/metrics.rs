use pcnprobe_core::metrics::{accuracy, auroc2, auroc2_scores, pearson, MetricsReport};
use pcnprobe_core::probes::{softmax_record, structural_record, ProbeKind, ProbeRecord};
use pcnprobe_core::PcnError;
use proptest::prelude::*;

/// Exhaustive pair enumeration with half credit for ties.
fn pairwise_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut credit, mut pairs) = (0.0, 0.0);
    for (i, &p) in positive.iter().enumerate() {
        for (j, &q) in positive.iter().enumerate() {
            if p && !q {
                pairs += 1.0;
                credit += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    (pairs > 0.0).then(|| credit / pairs)
}

fn records(scores: &[f64], positive: &[bool]) -> Vec<ProbeRecord> {
    scores
        .iter()
        .zip(positive)
        .enumerate()
        .map(|(i, (&s, &c))| ProbeRecord {
            image_index: i,
            probe: ProbeKind::Structural,
            predicted: 0,
            margin: s,
            correct: c,
            scores: Vec::new(),
        })
        .collect()
}

fn scored_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=50).prop_flat_map(|n| {
        let tied = prop::collection::vec((0i32..6).prop_map(|v| v as f64 * 0.25), n);
        let spread = prop::collection::vec(-100.0f64..100.0, n);
        (prop_oneof![tied, spread], prop::collection::vec(any::<bool>(), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_equals_pair_enumeration((scores, positive) in scored_set()) {
        let got = auroc2(&records(&scores, &positive));
        match pairwise_auc(&scores, &positive) {
            Some(want) => prop_assert_eq!(got.unwrap(), want),
            None => prop_assert!(matches!(got, Err(PcnError::Undefined(_)))),
        }
    }

    #[test]
    fn auroc_ignores_monotone_transforms((scores, positive) in scored_set()) {
        prop_assume!(positive.iter().any(|&p| p) && positive.iter().any(|&p| !p));
        let a = auroc2_scores(&scores, &positive).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (s / 50.0).exp() * 3.0 - 7.0).collect();
        prop_assert_eq!(a, auroc2_scores(&warped, &positive).unwrap());
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc2_scores(&flipped, &positive).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn margins_are_recomputable_from_scores(e in prop::collection::vec(-50.0f64..50.0, 10), label in 0usize..10) {
        let r = structural_record(3, &e, label);
        let mut sorted = e.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(r.margin, sorted[1] - sorted[0]);
        prop_assert!(r.margin >= 0.0);
        prop_assert_eq!(e[r.predicted], sorted[0]);
        prop_assert_eq!(r.correct, r.predicted == label);
        prop_assert_eq!(&r.scores, &e);
    }

    #[test]
    fn softmax_margin_is_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 10), shift in -100.0f64..100.0) {
        let a = softmax_record(0, &z, 0);
        let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
        let b = softmax_record(0, &shifted, 0);
        prop_assert!((a.margin - b.margin).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.margin));
        let mut p = a.scores.clone();
        p.sort_by(|x, y| y.total_cmp(x));
        prop_assert!((a.margin - (p[0] - p[1])).abs() < 1e-12);
    }
}

#[test]
fn perfect_separation_and_full_ties() {
    let pos = [true, true, false, false];
    assert_eq!(auroc2_scores(&[0.9, 0.8, 0.2, 0.1], &pos).unwrap(), 1.0);
    assert_eq!(auroc2_scores(&[0.1, 0.2, 0.8, 0.9], &pos).unwrap(), 0.0);
    assert_eq!(auroc2_scores(&[0.5; 4], &pos).unwrap(), 0.5);
}

#[test]
fn degenerate_and_invalid_inputs() {
    assert!(matches!(auroc2_scores(&[0.1, 0.2], &[true, true]), Err(PcnError::Undefined(_))));
    assert!(matches!(auroc2_scores(&[f64::NAN, 0.2], &[true, false]), Err(PcnError::NonFinite { .. })));
    assert!(auroc2_scores(&[0.1], &[true, false]).is_err());
    assert!(accuracy(&[]).is_err());
    let rep = MetricsReport::from_records(&records(&[0.3, 0.4], &[true, true])).unwrap();
    assert_eq!((rep.accuracy, rep.auroc2, rep.n_correct), (1.0, None, 2));
}

#[test]
fn pearson_matches_textbook_values() {
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    // x = 1..5, y = (2, 1, 4, 3, 5): cov 2, var 2 each
    assert!((pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap() - 0.8).abs() < 1e-12);
    assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(PcnError::Undefined(_))));
    assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
}
