//! Property tests for the choice model: probability normalization and
//! support, revenue bounds, and sampling frequencies against exact
//! probabilities.

use assort_core::mnl::{choice_probabilities, expected_revenue, sample_purchase};
use assort_core::{Assortment, Coefficient, ContextSlice};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn slice_and_theta(
    n: usize,
    d: usize,
) -> impl Strategy<Value = (ContextSlice, Coefficient)> {
    (
        proptest::collection::vec(proptest::collection::vec(-2.0..2.0f64, d), n),
        proptest::collection::vec(0.0..1.0f64, n),
        proptest::collection::vec(-1.5..1.5f64, d),
    )
        .prop_map(|(rows, revenues, theta)| {
            (
                ContextSlice::from_rows(&rows, revenues).unwrap(),
                Coefficient::new(theta).unwrap(),
            )
        })
}

fn subset(n: usize) -> impl Strategy<Value = Assortment> {
    (1u32..(1 << n)).prop_map(move |mask| {
        Assortment::new((0..n).filter(|&i| mask >> i & 1 == 1).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn probabilities_normalize_and_respect_support(
        (slice, theta) in slice_and_theta(6, 3),
        s in subset(6),
    ) {
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        let mut total = probs.no_purchase();
        prop_assert!(probs.no_purchase() > 0.0);
        for &item in s.items() {
            let p = probs.prob(Some(item));
            prop_assert!(p > 0.0 && p < 1.0);
            total += p;
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
        for item in 0..6 {
            if !s.contains(item) {
                prop_assert_eq!(probs.prob(Some(item)), 0.0);
            }
        }
    }

    #[test]
    fn expected_revenue_is_bounded_by_offered_revenues(
        (slice, theta) in slice_and_theta(6, 3),
        s in subset(6),
    ) {
        let value = expected_revenue(&theta, &slice, &s).unwrap();
        let max_r = s.items().iter().map(|&i| slice.revenue(i)).fold(0.0f64, f64::max);
        prop_assert!(value >= 0.0);
        prop_assert!(value <= max_r + 1e-12);
        prop_assert_eq!(expected_revenue(&theta, &slice, &Assortment::empty()).unwrap(), 0.0);
    }

    #[test]
    fn larger_utility_means_larger_choice_probability(
        (slice, theta) in slice_and_theta(6, 3),
        s in subset(6),
    ) {
        let probs = choice_probabilities(&theta, &slice, &s).unwrap();
        let items = s.items();
        for i in 0..items.len() {
            for j in (i + 1)..items.len() {
                let ui = slice.utility(items[i], &theta).unwrap();
                let uj = slice.utility(items[j], &theta).unwrap();
                let pi = probs.prob(Some(items[i]));
                let pj = probs.prob(Some(items[j]));
                if ui > uj + 1e-12 {
                    prop_assert!(pi > pj);
                }
            }
        }
    }
}

#[test]
fn sampling_frequencies_match_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let slice = ContextSlice::from_rows(
        &[
            vec![0.8, -0.3],
            vec![-0.5, 0.9],
            vec![0.2, 0.4],
            vec![-0.9, -0.2],
        ],
        vec![0.5, 0.7, 0.9, 0.3],
    )
    .unwrap();
    let theta = Coefficient::new(vec![0.7, -0.4]).unwrap();
    let s = Assortment::new(vec![0, 1, 3]).unwrap();
    let probs = choice_probabilities(&theta, &slice, &s).unwrap();

    let draws = 200_000usize;
    let mut counts = [0u64; 4];
    let mut none = 0u64;
    for _ in 0..draws {
        match sample_purchase(&theta, &slice, &s, &mut rng).unwrap() {
            Some(item) => counts[item] += 1,
            None => none += 1,
        }
    }
    // with n = 2e5 the sampling error per cell is below 0.004 at 3+ sigma
    let tol = 0.005;
    assert!((none as f64 / draws as f64 - probs.no_purchase()).abs() < tol);
    for &item in s.items() {
        let freq = counts[item] as f64 / draws as f64;
        assert!(
            (freq - probs.prob(Some(item))).abs() < tol,
            "item {item}: freq {freq} vs prob {}",
            probs.prob(Some(item))
        );
    }
    assert_eq!(counts[2], 0, "unoffered item can never be sampled");
}
