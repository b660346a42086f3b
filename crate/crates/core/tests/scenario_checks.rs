use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiftweigh::bounds::{BoundInputs, Regime};
use shiftweigh::estimators::{oracle_estimate, rank_classifiers};
use shiftweigh::kmm::SolverOptions;
use shiftweigh::scenarios::*;

#[test]
fn density_ratio_integrates_to_one_by_monte_carlo() {
    for s in [scenario_s1(), scenario_s3()] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let x = s.train_marginal().sample(&mut rng, n);
        let (mut sum, mut sq) = (0.0, 0.0);
        for r in x.rows() {
            let b = s.beta(r);
            sum += b;
            sq += b * b;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * se, "{}: mean {mean}, se {se}", s.id());
    }
}

#[test]
fn regression_values_stay_in_unit_interval() {
    for s in builtin_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = s.test_marginal().sample(&mut rng, 20_000);
        for r in x.rows() {
            let m = s.m(r);
            assert!((0.0..=1.0).contains(&m), "{}: m = {m}", s.id());
        }
    }
}

#[test]
fn b_true_dominates_sampled_ratios() {
    for s in builtin_scenarios() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = s.train_marginal().sample(&mut rng, 50_000);
        let sup = x.rows().map(|r| s.beta(r)).fold(0.0, f64::max);
        assert!(sup <= s.b_true() + 1e-9, "{}: {sup} > {}", s.id(), s.b_true());
    }
}

#[test]
fn oracle_is_accurate_at_large_n() {
    let s = scenario_s1();
    let r = run_trial(&s, &EstimatorConfig::oracle(), 100_000, 10, 4).unwrap();
    assert!(r.abs_error.unwrap() <= 0.01, "{:?}", r.abs_error);
}

#[test]
fn oracle_matches_quadrature_within_three_standard_errors() {
    let s = scenario_s1();
    let n = 1_000_000;
    let sample = s.sample_seeded(8, n, 1);
    let y = sample.train.labels().unwrap();
    let est = oracle_estimate(&sample.train, &sample.beta_true, s.b_true() * 1.001).unwrap().point;
    let terms: Vec<f64> = sample.beta_true.iter().zip(y).map(|(b, y)| b * y).collect();
    let var = terms.iter().map(|t| (t - est).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((est - s.ey_te()).abs() <= 3.0 * se, "{est} vs {} (se {se})", s.ey_te());
}

#[test]
fn kmm_single_seed_is_inside_in_rkhs_bound() {
    let s = scenario_s1();
    let r = run_trial(&s, &EstimatorConfig::kmm(), 2000, 2000, 7).unwrap();
    let Some(regime) = s.bound_regime() else { panic!("s1 is in the RKHS") };
    let bound = BoundInputs { b: s.b_true(), c: 1.0, delta: 0.05, n_tr: 2000, n_te: 2000, regime }
        .evaluate()
        .unwrap();
    assert!(r.abs_error.unwrap() < bound.total, "{:?} vs {}", r.abs_error, bound.total);
}

#[test]
fn repeated_trials_are_identical() {
    let s = scenario_s1();
    let a = run_trial(&s, &EstimatorConfig::kmm(), 300, 300, 99).unwrap();
    let b = run_trial(&s, &EstimatorConfig::kmm(), 300, 300, 99).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_shift_weights_are_near_one() {
    let s = scenario_s0();
    let mse = population_consistency_check(&s, 2000, 3, &SolverOptions::default()).unwrap();
    assert!(mse <= 0.1, "mse {mse}");
    let again = population_consistency_check(&s, 2000, 3, &SolverOptions::default()).unwrap();
    assert_eq!(mse, again);
}

#[test]
fn weak_confidence_level_still_covers() {
    let s = scenario_s1();
    let regime = s.bound_regime().unwrap();
    let cfg = CoverageConfig { n_tr: 400, n_te: 400, delta: 0.5, reps: 60, box_upper: None, solver: Default::default() };
    let r = measure_coverage(&s, &regime, &cfg, &HarnessOptions::seeded(12)).unwrap();
    assert!(r.fraction >= 0.5, "{}", r.fraction);
}

/// Halving `B` violates the bound's assumption; the outcome is only reported.
#[test]
fn halved_box_negative_control() {
    let s = scenario_s1();
    let regime = s.bound_regime().unwrap();
    let cfg = CoverageConfig {
        n_tr: 400,
        n_te: 400,
        delta: 0.05,
        reps: 40,
        box_upper: Some(s.b_true() / 2.0),
        solver: Default::default(),
    };
    let r = measure_coverage(&s, &regime, &cfg, &HarnessOptions::seeded(13)).unwrap();
    println!("halved B: coverage {} ({} of {})", r.fraction, r.covered, r.reps);
    assert_eq!(r.reps, 40);
}

#[test]
fn coverage_rejects_mismatched_regime() {
    let s = scenario_s2();
    let cfg = CoverageConfig { n_tr: 50, n_te: 50, delta: 0.05, reps: 30, box_upper: None, solver: Default::default() };
    let r = measure_coverage(&s, &Regime::InRkhs { norm_m: 1.0 }, &cfg, &HarnessOptions::seeded(0));
    assert!(matches!(r, Err(shiftweigh::Error::Usage(_))));
    let s1 = scenario_s1();
    let r = measure_coverage(&s1, &Regime::InRkhs { norm_m: 0.5 }, &cfg, &HarnessOptions::seeded(0));
    assert!(matches!(r, Err(shiftweigh::Error::Usage(_))));
}

/// Test-marginal expectation of `f` on [0, 1] by the midpoint rule.
fn test_expectation(s: &ShiftScenario, f: impl Fn(f64) -> f64) -> f64 {
    let n = 200_000;
    (0..n)
        .map(|i| {
            let x = (i as f64 + 0.5) / n as f64;
            f(x) * s.test_marginal().pdf(&[x])
        })
        .sum::<f64>()
        / n as f64
}

/// Classifier `a` errs at a constant rate; `b` is better on the training
/// region but worse by 0.2 under the test marginal. KMM must order them.
#[test]
fn ranking_follows_shifted_risk() {
    let s = scenario_s1();
    let risk_a = 0.3;
    let mean_x = test_expectation(&s, |x| x);
    let risk_b = |x: f64| (0.5 + 0.9 * (x - mean_x)).clamp(0.0, 1.0);
    let gap = test_expectation(&s, risk_b) - risk_a;
    assert!((gap - 0.2).abs() < 0.01, "true gap {gap}");

    let kernel = s.kernel().clone();
    let mut correct = 0;
    for seed in 0..100u64 {
        let sample = s.sample_seeded(1000 + seed, 500, 1000);
        let xs = sample.train.features();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut la = Vec::with_capacity(xs.nrows());
        let mut lb = Vec::with_capacity(xs.nrows());
        for r in xs.rows() {
            la.push(f64::from(u8::from(rng.gen::<f64>() < risk_a)));
            lb.push(f64::from(u8::from(rng.gen::<f64>() < risk_b(r[0]))));
        }
        let ranking =
            rank_classifiers(xs, &[la, lb], &sample.test, &kernel, s.b_true(), &SolverOptions::default(), None)
                .unwrap();
        if ranking.entries[0].classifier == 0 {
            correct += 1;
        }
    }
    assert!(correct >= 95, "correct in {correct} of 100");
}

