mod common;

use balance_forge::balance::{ess, ks, smd, spearman};
use balance_forge::config::StudyConfigFile;
use balance_forge::datagen::{simulate_dataset, TreatmentModelCoefficients};
use balance_forge::estimate::{att_dr_continuous_on, att_ipw, replicate_metrics};
use balance_forge::study::{aggregate, ReplicateRecord, ScenarioConfig};
use balance_forge::weights::{
    estimate_weights_on, expand_moments, fit_eb, fit_gbm, EbConfig, EstimatorSettings, GbmConfig,
    MomentExpansionConfig,
};
use balance_forge::{ConfounderSetId, Dataset, EstimatorId, OutcomeModelId, WeightSet};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::sample::subsequence;

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec((0i32..12).prop_map(|v| f64::from(v) * 0.5 - 2.0), n),
            proptest::collection::vec(0u8..2, n),
            proptest::collection::vec(0.01f64..10.0, n),
        )
            .prop_filter("both groups present", |(_, t, _)| t.contains(&0) && t.contains(&1))
    })
}

proptest! {
    #[test]
    fn ks_is_invariant_under_monotone_maps((x, t, w) in instance()) {
        let base = ks(&x, &t, &w);
        prop_assert!((0.0..=1.0).contains(&base));
        let exp: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let cubic: Vec<f64> = x.iter().map(|v| 2.0 * v * v * v + v).collect();
        prop_assert!((ks(&exp, &t, &w) - base).abs() <= 1e-15);
        prop_assert!((ks(&cubic, &t, &w) - base).abs() <= 1e-15);
    }

    #[test]
    fn balance_metrics_ignore_weight_scale((x, t, w) in instance(), c in 0.001f64..1000.0) {
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        prop_assert!((ks(&x, &t, &w) - ks(&x, &t, &scaled)).abs() < 1e-12);
        match (smd(&x, &t, &w), smd(&x, &t, &scaled)) {
            (Some(a), Some(b)) => {
                prop_assert!(a >= 0.0);
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
            }
            (None, None) => {}
            _ => prop_assert!(false, "definedness changed with scale"),
        }
    }

    #[test]
    fn ess_lies_between_one_and_n(w in proptest::collection::vec(1e-6f64..1e3, 1..200)) {
        let e = ess(&w).unwrap();
        prop_assert!(e >= 1.0 - 1e-12 && e <= w.len() as f64 * (1.0 + 1e-12));
        let flat = vec![w[0]; w.len()];
        prop_assert!((ess(&flat).unwrap() - w.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn spearman_is_bounded(pairs in proptest::collection::vec((-5i32..5, -5i32..5), 3..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn interaction_order_does_not_change_the_linear_predictor(
        x in proptest::collection::vec(-3.0f64..3.0, 10),
        order in Just((0..10).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let base = TreatmentModelCoefficients::default();
        let mut shuffled = base.clone();
        shuffled.interactions = order.iter().map(|&k| base.interactions[k]).collect();
        prop_assert!((base.linear_predictor(&x) - shuffled.linear_predictor(&x)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entropy_balance_matches_moments_exactly(
        n in 60usize..200,
        p in 1usize..4,
        m in 1usize..3,
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let t: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let x = DMatrix::from_fn(n, p, |i, _| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r);
            z + 0.2 * f64::from(t[i])
        });
        let Ok(ws) = fit_eb(&x, &t, &EbConfig::new(m)) else {
            return Err(TestCaseError::reject("infeasible draw"));
        };
        prop_assume!(ws.converged);
        let z = expand_moments(&x, &MomentExpansionConfig::detect(&x, m)).unwrap();
        let nt = t.iter().filter(|&&v| v == 1).count() as f64;
        let wc: f64 = (0..n).filter(|&i| t[i] == 0).map(|i| ws.weights[i]).sum();
        prop_assert!((wc - (n as f64 - nt)).abs() < 1e-9 * n as f64);
        for j in 0..z.ncols() {
            let target: f64 = (0..n).filter(|&i| t[i] == 1).map(|i| z[(i, j)]).sum::<f64>() / nt;
            let got: f64 = (0..n).filter(|&i| t[i] == 0).map(|i| ws.weights[i] * z[(i, j)]).sum::<f64>() / wc;
            prop_assert!((got - target).abs() < 1e-10, "column {j}: {got} vs {target}");
        }
    }

    #[test]
    fn affine_rescaling_leaves_lr_and_eb_weights_unchanged(
        seed in 0u64..10_000,
        scale in prop_oneof![0.1f64..0.9, 1.5f64..20.0],
        shift in -5.0f64..5.0,
    ) {
        let d = simulate_dataset(300, OutcomeModelId::O2, seed).unwrap();
        let mut moved = d.clone();
        // X2 is continuous
        for i in 0..d.n() {
            moved.covariates[(i, 1)] = d.covariates[(i, 1)] * scale + shift;
        }
        let cols = [1, 2, 3, 4];
        let settings = EstimatorSettings::default();
        for est in [EstimatorId::Lr, EstimatorId::Eb1] {
            let a = estimate_weights_on(&d, &cols, est, &settings).unwrap();
            let b = estimate_weights_on(&moved, &cols, est, &settings).unwrap();
            for (u, v) in a.weights.iter().zip(&b.weights) {
                prop_assert!((u - v).abs() < 1e-6 * (1.0 + u.abs()), "{est:?}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn regression_estimates_ignore_weight_scale_and_reduce_to_ipw(
        seed in 0u64..10_000,
        c in 0.01f64..100.0,
    ) {
        let d = simulate_dataset(200, OutcomeModelId::O2, seed).unwrap();
        let ws = estimate_weights_on(&d, &[1, 2, 3, 4], EstimatorId::Lr, &EstimatorSettings::default()).unwrap();
        let scaled = WeightSet::new(ws.weights.iter().map(|w| w * c).collect(), ws.estimator);
        let a = att_dr_continuous_on(&d, &ws, &[1, 2, 3, 4]).unwrap().value;
        let b = att_dr_continuous_on(&d, &scaled, &[1, 2, 3, 4]).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        let ipw = att_ipw(&d, &ws).unwrap().value;
        let dr_empty = att_dr_continuous_on(&d, &ws, &[]).unwrap().value;
        prop_assert!((ipw - dr_empty).abs() < 1e-10);
    }

    #[test]
    fn noiseless_linear_outcome_is_recovered_exactly(
        seed in 0u64..10_000,
        gamma in -2.0f64..2.0,
        coefs in proptest::collection::vec(-1.0f64..1.0, 4),
        w in proptest::collection::vec(0.05f64..5.0, 150),
    ) {
        let base = simulate_dataset(150, OutcomeModelId::O2, seed).unwrap();
        let cols = [1usize, 2, 4, 7];
        let y: Vec<f64> = (0..150)
            .map(|i| {
                0.3 + gamma * f64::from(base.treatment[i])
                    + cols.iter().zip(&coefs).map(|(&c, b)| b * base.covariates[(i, c - 1)]).sum::<f64>()
            })
            .collect();
        let d = Dataset::new(base.covariates.clone(), base.treatment.clone(), y, None, OutcomeModelId::O2, seed).unwrap();
        let est = att_dr_continuous_on(&d, &WeightSet::new(w, EstimatorId::Lr), &cols).unwrap();
        prop_assert!((est.value - gamma).abs() < 1e-8);
    }

    #[test]
    fn aggregate_mse_bounds_squared_bias(estimates in proptest::collection::vec(-3.0f64..3.0, 1..50)) {
        let truth = -0.4;
        let records: Vec<ReplicateRecord> = estimates
            .iter()
            .enumerate()
            .map(|(k, &e)| {
                let (arb, se) = replicate_metrics(e, truth).unwrap();
                ReplicateRecord {
                    outcome: OutcomeModelId::O2,
                    confounder_set: ConfounderSetId::TrueConfounders,
                    estimator: EstimatorId::Lr,
                    n: 100,
                    replicate_index: k,
                    seed: k as u64,
                    estimate: Some(e),
                    abs_rel_bias: Some(arb),
                    squared_error: Some(se),
                    mean_smd: None,
                    max_smd: None,
                    mean_ks: None,
                    max_ks: None,
                    ess_control: None,
                    converged: true,
                    redraws: 0,
                    notes: String::new(),
                }
            })
            .collect();
        let rows = aggregate(&records, truth).unwrap();
        prop_assert_eq!(rows.len(), 1);
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        prop_assert!(rows[0].mse.unwrap() >= (mean - truth).powi(2) - 1e-12);
        prop_assert!((rows[0].abs_rel_bias_of_mean.unwrap() - (mean - truth).abs() / 0.4).abs() < 1e-12);
    }

    #[test]
    fn study_config_round_trips(
        sizes in subsequence(vec![40usize, 80, 100, 200, 500, 2000], 1..6),
        estimators in subsequence(EstimatorId::ALL.to_vec(), 1..9),
        sets in subsequence(ConfounderSetId::ALL.to_vec(), 1..7),
        replicates in 1usize..500,
        base_seed in any::<u64>(),
        shrinkage in 0.001f64..1.0,
    ) {
        let mut cfg = StudyConfigFile {
            sample_sizes: sizes,
            estimators,
            confounder_sets: sets,
            replicates,
            base_seed,
            ..StudyConfigFile::default()
        };
        cfg.hyperparameters.gbm.shrinkage = shrinkage;
        cfg.validate().unwrap();
        let back = StudyConfigFile::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.grid(), cfg.grid());
    }

    #[test]
    fn replicate_seeds_are_distinct_within_a_cell(n in 4usize..3000, base_seed in any::<u64>()) {
        let cell = ScenarioConfig {
            n,
            outcome: OutcomeModelId::O2,
            confounder_set: ConfounderSetId::AllCovariates,
            estimator: EstimatorId::Eb2,
            replicates: 200,
            base_seed,
        };
        let mut seeds: Vec<u64> = (0..200).map(|k| cell.replicate_seed(k)).collect();
        seeds.sort_unstable();
        seeds.dedup();
        prop_assert_eq!(seeds.len(), 200);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gbm_selects_the_first_minimum_of_its_trace(seed in 0u64..1000) {
        let d = simulate_dataset(120, OutcomeModelId::O2, seed).unwrap();
        let cfg = GbmConfig { max_trees: 300, eval_stride: 30, ..GbmConfig::default() };
        let fit = fit_gbm(&d.select(&[1, 2, 3, 4, 5, 6, 7]), &d.treatment, &cfg).unwrap();
        prop_assert_eq!(fit.trace.len(), 11);
        let best = fit.trace.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let first = fit.trace.iter().find(|e| e.1 == best).unwrap().0;
        prop_assert_eq!(fit.best_iteration, first);
        prop_assert_eq!(fit.deviance.len(), 301);
        prop_assert!(fit.deviance[300] < fit.deviance[0]);
    }
}
