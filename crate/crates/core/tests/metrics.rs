mod common;

use common::brute_auc;
use mi_transfer::transfer::{accuracy, roc_auc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn auc_equals_pair_counting_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        // a coarse grid forces ties
        let levels = rng.random_range(1..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels), "case {case}");
    }
}

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 2, 0], &[0, 1, 2, 1]).unwrap(), 0.75);
    assert_eq!(accuracy(&[1, 0, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
}

fn distinct_scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::hash_set(-1_000_000i64..1_000_000, n),
            proptest::collection::vec(0usize..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s.into_iter().map(|v| v as f64 / 1000.0).collect(), l)
            })
    })
}

proptest! {
    #[test]
    fn negated_scores_complement((scores, labels) in distinct_scores_and_labels()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn increasing_transform_invariant((scores, labels) in distinct_scores_and_labels()) {
        let warped: Vec<f64> = scores.iter().map(|s| (s / 100.0).exp() * 3.0 - 7.0).collect();
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
    }
}
