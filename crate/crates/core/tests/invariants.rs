use depgem::analysis::{dissimilarity_values, good_index, jaccard, shannon, simpson};
use depgem::kernels::{gram, KernelFamily, KernelSpec};
use depgem::predictive::gp_condition;
use depgem::stickbreaking::{g_transform, stick_break, GemParams, WeightProfile, BREAK_EPS};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::SquaredExponential),
        Just(KernelFamily::OrnsteinUhlenbeck),
        Just(KernelFamily::RationalQuadratic),
    ]
}

fn profile(n: usize) -> impl Strategy<Value = WeightProfile> {
    prop::collection::vec(0.01f64..0.99, n).prop_map(|v| stick_break(&v))
}

proptest! {
    #[test]
    fn breaks_and_weights_are_proper(
        z in prop::collection::vec(-8.0f64..8.0, 1..40),
        sigma in 0.1f64..5.0,
        m in 0.05f64..50.0,
    ) {
        let params = GemParams::new(m).unwrap();
        let v: Vec<f64> = z.iter().map(|z| g_transform(*z, sigma, &params)).collect();
        prop_assert!(v.iter().all(|v| (BREAK_EPS..=1.0 - BREAK_EPS).contains(v)));
        let p = stick_break(&v);
        prop_assert!(p.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((p.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indices_are_bounded(p in profile(12)) {
        let s = simpson(&p);
        prop_assert!((0.0..1.0).contains(&s));
        prop_assert!(shannon(&p) >= 0.0);
        prop_assert!((good_index(&p, 1.0, 1.0) - shannon(&p)).abs() < 1e-12);
        prop_assert!((good_index(&p, 2.0, 0.0) - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn baseline_dissimilarity_of_identical_sites_is_zero(p in profile(6), q in profile(6)) {
        let (jac, jac0) = dissimilarity_values(std::slice::from_ref(&q), &[p.clone(), p.clone()]).unwrap();
        prop_assert_eq!(jac0, 0.0);
        prop_assert!((jac[0] - jaccard(&q, &p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn gram_matrices_factor(
        family in family(),
        lambda in 0.1f64..10.0,
        sigma in 0.1f64..3.0,
        mut xs in prop::collection::vec(0.0f64..20.0, 1..12),
    ) {
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        let spec = KernelSpec::new(family, lambda, sigma).unwrap();
        let k = gram(&spec, &xs).unwrap();
        let l = k.chol();
        let err = (l * l.transpose() - k.values()).abs().max();
        prop_assert!(err <= 1e-8 * sigma * sigma + k.jitter() * 2.0);
    }

    #[test]
    fn conditional_variance_is_at_most_prior(
        family in family(),
        lambda in 0.2f64..5.0,
        z in prop::collection::vec(-3.0f64..3.0, 3),
        x_star in prop::collection::vec(-2.0f64..8.0, 1..5),
    ) {
        let spec = KernelSpec::new(family, lambda, 1.0).unwrap();
        let xs = [0.0, 2.5, 5.0];
        let star: Vec<f64> = x_star.iter().map(|x| if xs.iter().any(|t| (t - x).abs() < 1e-3) { x + 0.01 } else { *x }).collect();
        let (mean, cov) = gp_condition(&spec, &xs, &star, &z).unwrap();
        prop_assert!(mean.iter().all(|m| m.is_finite()));
        for s in 0..star.len() {
            prop_assert!(cov[(s, s)] <= 1.0 + 1e-12);
            prop_assert!(cov[(s, s)] >= -1e-10);
        }
    }
}
