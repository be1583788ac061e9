use proptest::prelude::*;

use psmed::crossfit::partition;
use psmed::estimators::{assemble_effects, estimate_thetas, Method, Scale};
use psmed::inference::{percentile_interval, resample_rows, wald_interval};
use psmed::nuisance::{fit_parametric_bundle, ModelSpec, Positivity};
use psmed::numeric::{expit, logit, normal_quantile};
use psmed::simulation::simulate;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expit_is_a_probability_and_inverts_logit(t in -30.0f64..30.0) {
        let p = expit(t);
        prop_assert!(p > 0.0 && p < 1.0);
        if t.abs() <= 15.0 {
            prop_assert!((logit(p) - t).abs() < 1e-6 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn normal_quantile_is_monotone(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(normal_quantile(lo) <= normal_quantile(hi));
        prop_assert!((normal_quantile(a) + normal_quantile(1.0 - a)).abs() < 1e-9);
    }

    #[test]
    fn folds_cover_every_unit_evenly(n in 2usize..400, v in 2usize..10, seed in any::<u64>()) {
        prop_assume!(v <= n);
        let plan = partition(n, v, seed).unwrap();
        let mut sizes = vec![0usize; v];
        for a in &plan.assignments {
            prop_assert!((1..=v).contains(a));
            sizes[a - 1] += 1;
        }
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(plan.assignments, partition(n, v, seed).unwrap().assignments);
    }

    #[test]
    fn resamples_stay_in_range(n in 1usize..300, seed in any::<u64>(), rep in 0u64..1000) {
        let rows = resample_rows(n, seed, rep);
        prop_assert_eq!(rows.len(), n);
        prop_assert!(rows.iter().all(|i| *i < n));
        prop_assert_eq!(rows, resample_rows(n, seed, rep));
    }

    #[test]
    fn intervals_bracket_their_centre(mut v in prop::collection::vec(-1e3f64..1e3, 1..200), level in 0.5f64..0.99, se in 0.0f64..10.0) {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = percentile_interval(&v, level);
        prop_assert!(lo <= hi && v.contains(&lo) && v.contains(&hi));
        let (a, b) = wald_interval(1.5, se, level);
        prop_assert!(a <= 1.5 && 1.5 <= b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn effect_decompositions_hold_on_simulated_data(seed in 0u64..10_000) {
        let data = simulate(400, seed).unwrap();
        let bundle = fit_parametric_bundle(&data, &ModelSpec::all_covariates(&data)).unwrap();
        let table = estimate_thetas(&data, &bundle, Method::Mr, &Positivity::default()).unwrap();
        for scale in [Scale::Difference, Scale::RiskRatio] {
            let effects = assemble_effects(&table, scale).unwrap();
            let v = &effects.values;
            for w in v.chunks(3) {
                let want = match scale {
                    Scale::Difference => w[0].1 + w[1].1,
                    Scale::RiskRatio => w[0].1 * w[1].1,
                };
                prop_assert_eq!(w[2].1, want);
            }
        }
    }
}
