//! Production filter and controller against the dense oracles in `common`.

mod common;

use common::*;

use enkc::control::{
    control_gain, estimate_control, threshold_sparsify, ControlPerturbation, ControlProblem, Sparsifier, TriggerSet,
};
use enkc::ensemble::{EnkfAnalyzer, Ensemble, LocalizationConfig, ObservationModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn enkf_matches_dense_oracle() {
    let (cases, diff) = enkf_oracle_cases(11, 40);
    assert_eq!(cases, 40);
    assert!(diff < 1e-10, "{diff:e}");
}

#[test]
fn single_observation_is_scalar_kalman_update() {
    // one observation, no localization: each member moves along P^b H^T
    // by (y + eps - H x) / (H P^b H^T + r)
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (k, n, g, r) = (7, 5, 3, 0.6);
    let members = random_members(&mut rng, n, k, 0.0, 1.0);
    let x = columns(&members);
    let (_, a) = anomalies(&x);
    let pb = &a * a.transpose() / (n as f64 - 1.0);
    let regress: Vec<f64> = (0..k).map(|i| pb[(i, g)]).collect();
    let denom = pb[(g, g)] + r;
    let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * r.sqrt()).collect();
    let y = 1.25;

    let obs = ObservationModel::new(vec![g + 1], vec![r], k).unwrap();
    let lc = LocalizationConfig {
        enabled: false,
        scale: 1.0,
    };
    let got = EnkfAnalyzer::new(k, &obs, &lc)
        .unwrap()
        .update_with_perturbations(&Ensemble::from_members(&members).unwrap(), &[y], &eps)
        .unwrap();
    for i in 0..n {
        let innov = y + eps[i] - members[i][g];
        let want: Vec<f64> = (0..k).map(|j| members[i][j] + regress[j] * innov / denom).collect();
        assert!(max_diff(got.member(i), &want) < 1e-12);
    }
}

#[test]
fn perturbed_observation_mean_is_unbiased() {
    // prior {0, 2} (variance 2), y = 3, R = 1: the expected analysis mean is
    // 1 + 2/3 (3 - 1) = 7/3; the perturbation noise only adds sampling error
    let obs = ObservationModel::new(vec![1], vec![1.0], 1).unwrap();
    let lc = LocalizationConfig {
        enabled: false,
        scale: 1.0,
    };
    let an = EnkfAnalyzer::new(1, &obs, &lc).unwrap();
    let e = Ensemble::from_members(&[vec![0.0], vec![2.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 20_000;
    let means: Vec<f64> = (0..draws).map(|_| an.analyze(&e, &[3.0], &mut rng).unwrap().mean()[0]).collect();
    let mu = means.iter().sum::<f64>() / draws as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
    let se = (var / draws as f64).sqrt();
    // gain 2/3 times the mean of two N(0,1) draws: sd of the mean is (2/3)/sqrt(2)
    assert!((var.sqrt() - (2.0 / 3.0) / 2f64.sqrt()).abs() < 0.01, "spread {}", var.sqrt());
    assert!((mu - 7.0 / 3.0).abs() < 3.0 * se, "mean {mu} vs 7/3, se {se}");
}

#[test]
fn gain_small_instance_with_control_localization() {
    // K=6, N=3, one trigger, L_c = 2
    let cfg = small_model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let analysis = random_members(&mut rng, 3, 6, 5.0, 0.8);
        let mut p = ControlProblem {
            trigger_threshold: threshold_for(&analysis, &cfg, 4, 1),
            ..ControlProblem::default()
        };
        p.reference_value = p.trigger_threshold - 1.0;
        let oracle = dense_control(&analysis, &cfg, &p, Some(2.0), None);
        assert_eq!(oracle.trig.len(), 1);

        let a = Ensemble::from_members(&analysis).unwrap();
        let h = enkc::ensemble::forecast(&a, 4, &cfg).unwrap();
        let trig = TriggerSet {
            grids: oracle.trig.iter().map(|g| g + 1).collect(),
        };
        let sp = Sparsifier::ControlLocalization { lc: 2.0 };
        let gain = control_gain(&a, &h, &trig, &[p.base_variance()], &sp, false).unwrap();
        let d = max_diff(&gain, oracle.gain.as_slice());
        assert!(d < 1e-12, "{d:e}");
        // the mask zeroes exactly the rows at distance >= 2 from the trigger
        for (i, g) in gain.iter().enumerate() {
            if ring(i, oracle.trig[0], 6) >= 2.0 {
                assert_eq!(*g, 0.0);
            }
        }
    }
}

#[test]
fn full_pipeline_matches_dense_oracle() {
    let (cases, diff) = pipeline_oracle_cases(7, 60);
    assert_eq!(cases, 60);
    assert!(diff < 1e-10, "{diff:e}");
}

#[test]
fn aoei_with_huge_innovation_bounds_the_perturbation() {
    // innovation d with tiny spread: sigma^2 ~ d^2, so |delta| ~ |cross| / |d|
    let cfg = small_model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let analysis = random_members(&mut rng, 4, 6, 5.0, 1e-3);
    let threshold = threshold_for(&analysis, &cfg, 4, 1);
    let p = ControlProblem {
        trigger_threshold: threshold,
        reference_value: threshold - 1e4,
        weight_sd: 0.1,
        aoei: true,
        ..ControlProblem::default()
    };
    let oracle = dense_control(&analysis, &cfg, &p, None, None);
    let a = Ensemble::from_members(&analysis).unwrap();
    let got = estimate_control(&a, &cfg, &p, &Sparsifier::None, &mut rng).unwrap();
    assert!(max_diff(&got.perturbation.delta, &oracle.delta) < 1e-10);
    let d = got.innovation[0];
    assert!((got.variances[0] / (d * d) - 1.0).abs() < 1e-9);
    let col_max = oracle.gain.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    // gain ~ cross / d^2, so |delta| = |gain d| ~ |cross| / |d| is tiny
    assert!(got.perturbation.max_abs() <= col_max * d.abs() * (1.0 + 1e-9));
    assert!(got.perturbation.max_abs() < 1e-6);
}

#[test]
fn threshold_sparsify_matches_literal_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let v: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lambda: f64 = rng.random_range(0.01..=1.0);
        let got = threshold_sparsify(&ControlPerturbation::new(v.clone()).unwrap(), lambda);
        let tau = lambda * v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for (g, x) in got.delta.iter().zip(&v) {
            assert_eq!(*g, if x.abs() < tau { 0.0 } else { *x });
        }
    }
}
