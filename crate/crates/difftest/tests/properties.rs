//! Randomized property checks on the distribution functions and the test
//! statistics.

use difftest::hypotest::{chi2_cdf, chi2_quantile, noncentral_chi2_cdf};
use difftest::model::{make_ou_model, Hypothesis, ParameterSpace, Theta};
use difftest::simulate::{derive_seed, ou_exact, SimConfig, StepRule};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        // No regression-file persistence: integration-test crates have no
        // canonical source root for the file, and proptest warns on every
        // run while looking for one.
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn chi2_cdf_is_monotone_and_bounded(x in 0.0..200.0f64, dx in 0.0..10.0f64, df in 1usize..6) {
        let a = chi2_cdf(x, df);
        let b = chi2_cdf(x + dx, df);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a - 1e-14);
    }

    #[test]
    fn chi2_quantile_inverts_cdf(q in 0.001..0.999f64, df in 1usize..6) {
        let x = chi2_quantile(q, df);
        prop_assert!((chi2_cdf(x, df) - q).abs() < 1e-8);
    }

    #[test]
    fn noncentral_cdf_reduces_and_orders(x in 0.0..100.0f64, c in 0.0..60.0f64, df in 1usize..4) {
        // c = 0 reduces to the central law; mass shifts right as c grows.
        prop_assert!((noncentral_chi2_cdf(x, df, 0.0) - chi2_cdf(x, df)).abs() < 1e-10);
        prop_assert!(noncentral_chi2_cdf(x, df, c) <= chi2_cdf(x, df) + 1e-12);
    }

    #[test]
    fn statistics_nonnegative_on_random_paths(seed in 0u64..40, fixed_a in 0.5..1.5f64, fixed_b in 1.0..3.0f64) {
        let m = make_ou_model();
        let space = ParameterSpace {
            alpha_lower: vec![0.1],
            alpha_upper: vec![5.0],
            beta_lower: vec![-10.0],
            beta_upper: vec![10.0],
        };
        let cfg = SimConfig {
            n: 400,
            h: StepRule::NPowMinusTwoThirds,
            x0: vec![1.0],
            substeps: 1,
            seed: derive_seed(17, seed),
        };
        let path = ou_exact(&Theta::new(vec![1.0], vec![2.0]), &cfg).unwrap();
        let hyp1 = Hypothesis { alpha_fixed: vec![(0, fixed_a)], beta_fixed: vec![] };
        let hyp2 = Hypothesis { alpha_fixed: vec![], beta_fixed: vec![(0, fixed_b)] };
        let report = difftest::two_step_decision(&path, &m, &space, &hyp1, &hyp2, 0.05).unwrap();
        for s in [&report.stage1, &report.stage2] {
            prop_assert!(s.lambda >= 0.0 && s.lambda.is_finite());
            prop_assert!(s.wald >= 0.0 && s.wald.is_finite());
            prop_assert!(s.rao >= 0.0 && s.rao.is_finite());
            for p in [s.p_lambda, s.p_wald, s.p_rao] {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
        for c in [report.case_lambda, report.case_wald, report.case_rao] {
            prop_assert!((1..=4).contains(&c));
        }
    }
}
