use std::sync::Arc;

use proptest::prelude::*;
use queuecap::capacity_opt::{c_curve, SolverOptions};
use queuecap::channel_oracle::{exact_departure_law, per_letter_entropy, Enumeration};
use queuecap::distributions::{convolve, entropy, pplus_law, Base, Pmf, ServiceModel};
use queuecap::gap_checker::gap_at;
use queuecap::queue_sim::{
    exact_fifo_departure_law, normalize_strategy, simulate_fifo, total_variation, ArrivalPolicy,
    RandomStrategy, Strategy as QueueStrategy,
};

fn weights(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, len)
}

fn bits(p: &Pmf) -> f64 {
    entropy(p, Base::Bits).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pplus_is_linear_in_the_input(x in weights(1..=6), y in weights(1..=6), s in weights(1..=3), alpha in 0.0f64..=1.0) {
        let (x, y) = (Pmf::from_weights(0, x).unwrap(), Pmf::from_weights(0, y).unwrap());
        let s = Pmf::from_weights(1, s).unwrap();
        let lhs = pplus_law(&x.mix(&y, alpha).unwrap(), &s).unwrap();
        let rhs = pplus_law(&x, &s).unwrap().mix(&pplus_law(&y, &s).unwrap(), alpha).unwrap();
        prop_assert!(lhs.total_variation(&rhs) < 1e-12);
        let mass: f64 = lhs.probs().iter().sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adding_independent_noise_does_not_lower_entropy(x in weights(1..=8), s in weights(1..=4)) {
        let (x, s) = (Pmf::from_weights(0, x).unwrap(), Pmf::from_weights(1, s).unwrap());
        let sum = convolve(&x, &s);
        prop_assert!(bits(&sum) >= bits(&x).max(bits(&s)) - 1e-12);
    }

    #[test]
    fn entropy_is_shift_invariant(x in weights(1..=8), k in 0i64..5) {
        let x = Pmf::from_weights(0, x).unwrap();
        prop_assert!((bits(&x.shift(k).unwrap()) - bits(&x)).abs() < 1e-12);
    }

    #[test]
    fn geometric_law_maximizes_entropy(w in weights(1..=30), lambda in 0.05f64..0.95) {
        // any law on {1, 2, ...} whose mean is at most 1 / lambda
        let p = Pmf::from_weights(1, w).unwrap();
        let m: f64 = p.iter().map(|(k, q)| k as f64 * q).sum();
        prop_assume!(m <= 1.0 / lambda);
        let h_g = ((-lambda * lambda.log2()) - (1.0 - lambda) * (1.0 - lambda).log2()) / lambda;
        prop_assert!(bits(&p) <= h_g + 1e-9);
    }

    #[test]
    fn block_entropy_is_subadditive(x in weights(1..=4), n in 2usize..=4) {
        let x = Pmf::from_weights(0, x).unwrap();
        let law = exact_departure_law(&x, &ServiceModel::binary12(), n, &Enumeration::default()).unwrap();
        let marginals: f64 = (0..n).map(|i| bits(&law.marginal(i))).sum::<f64>() / n as f64;
        prop_assert!(per_letter_entropy(&law).unwrap() <= marginals + 1e-12);
    }

    #[test]
    fn normalization_keeps_the_departure_law(seed in any::<u64>(), message in 0u64..8, max_value in 1u64..4) {
        let strategy: Arc<dyn QueueStrategy> = Arc::new(RandomStrategy { seed, max_value });
        let policy = ArrivalPolicy::Feedback { strategy: strategy.clone(), message };
        let ArrivalPolicy::Feedback { strategy: normalized, .. } = normalize_strategy(&policy).unwrap() else {
            unreachable!()
        };
        let service = ServiceModel::binary12();
        let before = exact_fifo_departure_law(strategy.as_ref(), message, &service, 3, 1 << 20).unwrap();
        let after = exact_fifo_departure_law(normalized.as_ref(), message, &service, 3, 1 << 20).unwrap();
        prop_assert!(total_variation(&before, &after) < 1e-12);
    }

    #[test]
    fn fifo_traces_satisfy_the_recursion(seed in any::<u64>(), lambda in 0.05f64..0.45, n in 1usize..200) {
        let t = simulate_fifo(&ArrivalPolicy::Geometric { lambda }, &ServiceModel::binary12(), n, seed).unwrap();
        let mut prev_d = 0;
        for i in 0..n {
            prop_assert_eq!(t.service_starts[i], t.arrivals[i].max(prev_d));
            prop_assert_eq!(t.departures[i], t.service_starts[i] + t.services[i]);
            prev_d = t.departures[i];
        }
    }
}

proptest! {
    // each case runs two optimizers
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weak_side_never_exceeds_feedback_side(s in weights(1..=4), frac in 0.1f64..0.9) {
        let service = ServiceModel::custom(Pmf::from_weights(1, s).unwrap()).unwrap();
        let r = gap_at(&service, frac * service.mu(), &SolverOptions::default()).unwrap();
        prop_assert!(r.gap >= -1e-9, "{:?}", r);
    }

    #[test]
    fn c_curve_is_concave_and_nondecreasing(s in weights(1..=4)) {
        let service = ServiceModel::custom(Pmf::from_weights(1, s).unwrap()).unwrap();
        let grid: Vec<f64> = (0..9).map(|i| 0.5 * i as f64).collect();
        let c: Vec<f64> = c_curve(&service, &grid, &SolverOptions::default()).unwrap().into_iter().map(|p| p.1).collect();
        for w in c.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-8);
        }
        for w in c.windows(3) {
            prop_assert!(w[1] >= (w[0] + w[2]) / 2.0 - 1e-6);
        }
    }
}
