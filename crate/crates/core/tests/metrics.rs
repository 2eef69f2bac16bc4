mod common;

use proptest::prelude::*;

use common::{brute_auc, brute_macro_f1, brute_micro_f1, brute_mrr};
use slotgat::tasks::{macro_f1, micro_f1, mrr, roc_auc, Candidate};

fn predictions() -> impl Strategy<Value = (usize, Vec<usize>, Vec<usize>)> {
    (2usize..6, 1usize..40).prop_flat_map(|(c, n)| {
        (
            Just(c),
            proptest::collection::vec(0..c, n),
            proptest::collection::vec(0..c, n),
        )
    })
}

/// Scores drawn from a small grid so that ties are common.
fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    proptest::collection::vec((0u8..8, any::<bool>()), 2..60)
        .prop_filter("both classes present", |v| {
            v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
        })
        .prop_map(|v| v.into_iter().map(|(s, t)| (s as f64 / 4.0, t)).unzip())
}

proptest! {
    #[test]
    fn f1_matches_counting((c, pred, truth) in predictions()) {
        prop_assert_eq!(macro_f1(&pred, &truth, c).unwrap(), brute_macro_f1(&pred, &truth, c));
        prop_assert_eq!(micro_f1(&pred, &truth, c).unwrap(), brute_micro_f1(&pred, &truth, c));
    }

    #[test]
    fn single_label_micro_f1_is_accuracy((c, pred, truth) in predictions()) {
        let acc = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64;
        prop_assert!((micro_f1(&pred, &truth, c).unwrap() - acc).abs() < 1e-12);
    }

    #[test]
    fn auc_matches_pair_count((scores, truth) in scored()) {
        let got = roc_auc(&scores, &truth).unwrap();
        prop_assert!((got - brute_auc(&scores, &truth)).abs() < 1e-12);
    }

    #[test]
    fn negated_scores_mirror_auc((scores, truth) in scored()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = roc_auc(&scores, &truth).unwrap();
        let b = roc_auc(&neg, &truth).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mrr_matches_rank_count(
        lists in proptest::collection::vec(
            proptest::collection::vec((0u8..5, any::<bool>()), 1..12)
                .prop_filter("a positive", |l| l.iter().any(|x| x.1)),
            1..8,
        )
    ) {
        let plain: Vec<Vec<(usize, f64, bool)>> = lists
            .iter()
            .map(|l| l.iter().enumerate().map(|(i, &(s, p))| (i, s as f64, p)).collect())
            .collect();
        let cands: Vec<Vec<Candidate>> = plain
            .iter()
            .map(|l| l.iter().map(|&(node, score, positive)| Candidate { node, score, positive }).collect())
            .collect();
        let got = mrr(&cands).unwrap();
        prop_assert!((got - brute_mrr(&plain)).abs() < 1e-12);
        prop_assert!(got > 0.0 && got <= 1.0);
    }
}

#[test]
fn perfect_predictions_score_one() {
    let truth = [0, 1, 2, 2, 1];
    assert_eq!(macro_f1(&truth, &truth, 3).unwrap(), 1.0);
    assert_eq!(
        roc_auc(&[0.9, 0.1, 0.8], &[true, false, true]).unwrap(),
        1.0
    );
}
