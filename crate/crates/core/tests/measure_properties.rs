use mfg_core::field::Field;
use mfg_core::measures::{geodesic_mix, ll_monotonicity_gap, wasserstein};
use mfg_core::EmpiricalMeasure;
use proptest::prelude::*;

fn cloud() -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-50.0f64..50.0, 0.01f64..1.0), 1..40).prop_map(|v| {
        let (pts, ws): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        EmpiricalMeasure::weighted(pts, ws).unwrap()
    })
}

fn uniform_cloud() -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(-50.0f64..50.0, 1..40).prop_map(|v| EmpiricalMeasure::uniform(v).unwrap())
}

proptest! {
    #[test]
    fn distance_to_self_is_zero(m in cloud(), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        prop_assert_eq!(wasserstein(&m, &m, p).unwrap(), 0.0);
    }

    #[test]
    fn symmetric(a in cloud(), b in cloud(), p in prop::sample::select(vec![1.0, 2.0])) {
        let (ab, ba) = (wasserstein(&a, &b, p).unwrap(), wasserstein(&b, &a, p).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
    }

    #[test]
    fn triangle_inequality(a in cloud(), b in cloud(), c in cloud(), p in prop::sample::select(vec![1.0, 2.0])) {
        let ac = wasserstein(&a, &c, p).unwrap();
        let ab = wasserstein(&a, &b, p).unwrap();
        let bc = wasserstein(&b, &c, p).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9 * (1.0 + ac));
    }

    #[test]
    fn monotone_in_p(a in cloud(), b in cloud()) {
        let w1 = wasserstein(&a, &b, 1.0).unwrap();
        let w2 = wasserstein(&a, &b, 2.0).unwrap();
        prop_assert!(w1 <= w2 + 1e-9 * (1.0 + w2));
    }

    #[test]
    fn translation_moves_by_shift(m in cloud(), s in -10.0f64..10.0) {
        let shifted = m.map_1d(|x| x + s).unwrap();
        let w = wasserstein(&m, &shifted, 2.0).unwrap();
        prop_assert!((w - s.abs()).abs() < 1e-9);
    }

    #[test]
    fn equal_size_uniform_matches_sorted_pairs(v in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 1..30)) {
        let (mut a, mut b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (ma, mb) = (EmpiricalMeasure::uniform(a.clone()).unwrap(), EmpiricalMeasure::uniform(b.clone()).unwrap());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let direct = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        prop_assert!((wasserstein(&ma, &mb, 1.0).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn geodesic_endpoints_and_speed(a in uniform_cloud(), b in uniform_cloud(), t in 0.0f64..1.0) {
        let d = wasserstein(&a, &b, 2.0).unwrap();
        // W1 here: the square root in W2 inflates rounding in the weights.
        prop_assert!(wasserstein(&geodesic_mix(&a, &b, 0.0).unwrap(), &a, 1.0).unwrap() < 1e-9);
        prop_assert!(wasserstein(&geodesic_mix(&a, &b, 1.0).unwrap(), &b, 1.0).unwrap() < 1e-9);
        let mid = geodesic_mix(&a, &b, t).unwrap();
        prop_assert!((wasserstein(&a, &mid, 2.0).unwrap() - t * d).abs() < 1e-6 * (1.0 + d));
    }

    #[test]
    fn ll_gap_is_symmetric_and_vanishes_on_the_diagonal(a in cloud(), b in cloud()) {
        let u = Field::of_mean(|x, m| x * m + (x - m).powi(2));
        prop_assert_eq!(ll_monotonicity_gap(&u, &a, &a).unwrap(), 0.0);
        let ab = ll_monotonicity_gap(&u, &a, &b).unwrap();
        let ba = ll_monotonicity_gap(&u, &b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * (1.0 + ab.abs()));
    }

    #[test]
    fn ll_gap_of_mean_coupling_is_squared_mean_difference(a in cloud(), b in cloud()) {
        let u = Field::of_mean(|x, m| x * m);
        let d = a.mean_1d().unwrap() - b.mean_1d().unwrap();
        let gap = ll_monotonicity_gap(&u, &a, &b).unwrap();
        prop_assert!((gap - d * d).abs() <= 1e-8 * (1.0 + d * d));
    }
}
