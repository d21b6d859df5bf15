//! Dense brute-force transcriptions of the filter and control equations,
//! shared by the oracle tests and the acceptance suite.
#![allow(dead_code)]

use enkc::control::{estimate_control, ControlProblem, Sparsifier};
use enkc::ensemble::{EnkfAnalyzer, Ensemble, LocalizationConfig, ObservationModel};
use enkc::lorenz96::ModelConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn ring(i: usize, j: usize, k: usize) -> f64 {
    let d = i.abs_diff(j);
    d.min(k - d) as f64
}

/// Members as columns.
pub fn columns(members: &[Vec<f64>]) -> DMatrix<f64> {
    let k = members[0].len();
    DMatrix::from_fn(k, members.len(), |r, c| members[c][r])
}

pub fn anomalies(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mean = x.column_mean();
    let mut a = x.clone();
    for mut c in a.column_iter_mut() {
        c -= &mean;
    }
    (DMatrix::from_column_slice(mean.len(), 1, mean.as_slice()), a)
}

pub fn selection(rows: &[usize], k: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(rows.len(), k);
    for (r, &g) in rows.iter().enumerate() {
        h[(r, g)] = 1.0;
    }
    h
}

/// Stochastic EnKF with every matrix formed explicitly; `grids` are 0-based.
pub fn dense_enkf(
    members: &[Vec<f64>],
    grids: &[usize],
    r: &[f64],
    loc: Option<f64>,
    y: &[f64],
    eps: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let k = members[0].len();
    let n = members.len() as f64;
    let x = columns(members);
    let (_, a) = anomalies(&x);
    let pb = &a * a.transpose() / (n - 1.0);
    let rho = DMatrix::from_fn(k, k, |i, j| match loc {
        Some(l) => (-ring(i, j, k) / l).exp(),
        None => 1.0,
    });
    let pl = rho.component_mul(&pb);
    let h = selection(grids, k);
    let rm = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(r));
    let s = &h * &pl * h.transpose() + rm;
    let gain = &pl * h.transpose() * s.try_inverse().unwrap();
    members
        .iter()
        .zip(eps)
        .map(|(m, e)| {
            let xm = DMatrix::from_column_slice(k, 1, m);
            let d = DMatrix::from_fn(grids.len(), 1, |j, _| y[j] + e[j]) - &h * &xm;
            (xm + &gain * d).as_slice().to_vec()
        })
        .collect()
}

/// Lorenz 96 RK4 with modular indices, one member at a time.
pub fn naive_rk4(x: &[f64], f: f64, dt: f64, steps: usize) -> Vec<f64> {
    let k = x.len() as isize;
    let at = |v: &[f64], i: isize| v[i.rem_euclid(k) as usize];
    let tend = |v: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| (at(v, i + 1) - at(v, i - 2)) * at(v, i - 1) - at(v, i) + f)
            .collect()
    };
    let axpy = |v: &[f64], s: f64, d: &[f64]| -> Vec<f64> { v.iter().zip(d).map(|(a, b)| a + s * b).collect() };
    let mut x = x.to_vec();
    for _ in 0..steps {
        let k1 = tend(&x);
        let k2 = tend(&axpy(&x, dt / 2.0, &k1));
        let k3 = tend(&axpy(&x, dt / 2.0, &k2));
        let k4 = tend(&axpy(&x, dt, &k3));
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

pub struct DenseControl {
    pub trig: Vec<usize>,
    pub gain: DMatrix<f64>,
    pub delta: Vec<f64>,
}

/// Literal smoother-as-controller: cross and horizon covariances formed as
/// full K x K matrices, boxcar mask as a K x K matrix.
pub fn dense_control(
    analysis: &[Vec<f64>],
    cfg: &ModelConfig,
    p: &ControlProblem,
    lc: Option<f64>,
    lambda: Option<f64>,
) -> DenseControl {
    let k = cfg.k;
    let n = analysis.len() as f64;
    let horizon: Vec<Vec<f64>> = analysis
        .iter()
        .map(|m| naive_rk4(m, cfg.forcing, cfg.dt, p.horizon_steps))
        .collect();
    let xa = columns(analysis);
    let xh = columns(&horizon);
    let (_, aa) = anomalies(&xa);
    let (hmean, ah) = anomalies(&xh);
    let pac = &aa * ah.transpose() / (n - 1.0);
    let phh = &ah * ah.transpose() / (n - 1.0);
    let trig: Vec<usize> = (0..k).filter(|&i| hmean[(i, 0)] > p.trigger_threshold).collect();
    let hc = selection(&trig, k);
    let t = trig.len();
    let hbar = &hc * &hmean;
    let innov = DMatrix::from_fn(t, 1, |j, _| p.reference_value - hbar[(j, 0)]);
    let hvar = &hc * &phh * hc.transpose();
    let rc = DMatrix::from_fn(t, t, |a, b| {
        if a != b {
            0.0
        } else if p.aoei {
            p.base_variance().max(innov[(a, 0)].powi(2) - hvar[(a, a)])
        } else {
            p.base_variance()
        }
    });
    let cross = match lc {
        Some(l) => {
            let rho = DMatrix::from_fn(k, k, |i, j| if ring(i, j, k) < l { 1.0 } else { 0.0 });
            rho.component_mul(&pac) * hc.transpose()
        }
        None => &pac * hc.transpose(),
    };
    let gain = cross * (hvar + rc).try_inverse().unwrap();
    let raw = (&gain * innov).as_slice().to_vec();
    let delta = match lambda {
        Some(l) => {
            let tau = l * raw.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            raw.iter().map(|&v| if v.abs() < tau { 0.0 } else { v }).collect()
        }
        None => raw,
    };
    DenseControl { trig, gain, delta }
}

pub fn random_members(rng: &mut ChaCha8Rng, n: usize, k: usize, center: f64, sd: f64) -> Vec<Vec<f64>> {
    let base: Vec<f64> = (0..k).map(|_| center + 4.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    (0..n)
        .map(|_| base.iter().map(|b| b + sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn small_model(k: usize) -> ModelConfig {
    ModelConfig {
        k,
        forcing: 8.0,
        dt: 0.05,
        model_error_sd: 0.0,
    }
}

/// Threshold between the `t`-th and `t+1`-th largest horizon means, so
/// exactly `t` grids trigger.
pub fn threshold_for(analysis: &[Vec<f64>], cfg: &ModelConfig, steps: usize, t: usize) -> f64 {
    let n = analysis.len() as f64;
    let mut mean = vec![0.0; cfg.k];
    for m in analysis {
        for (s, v) in mean.iter_mut().zip(naive_rk4(m, cfg.forcing, cfg.dt, steps)) {
            *s += v / n;
        }
    }
    mean.sort_by(|a, b| b.total_cmp(a));
    0.5 * (mean[t - 1] + mean[t])
}


/// Random EnKF instances (K in 4..=8, N in 2..=5, with and without
/// localization); returns the case count and the largest member difference.
pub fn enkf_oracle_cases(seed: u64, count: usize) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for case in 0..count {
        let k = 4 + case % 5;
        let n = 2 + case % 4;
        let members = random_members(&mut rng, n, k, 2.0, 1.5);
        let grids: Vec<usize> = (0..k).filter(|g| (g + case) % 2 == 0 || *g == 0).collect();
        let r: Vec<f64> = grids.iter().map(|_| 0.3 + rng.random::<f64>()).collect();
        let y: Vec<f64> = grids.iter().map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let eps: Vec<Vec<f64>> = (0..n)
            .map(|_| r.iter().map(|v| v.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let loc = if case % 3 == 0 { None } else { Some(0.5 + case as f64 / 10.0) };

        let obs = ObservationModel::new(grids.iter().map(|g| g + 1).collect(), r.clone(), k).unwrap();
        let lc = LocalizationConfig {
            enabled: loc.is_some(),
            scale: loc.unwrap_or(1.0),
        };
        let an = EnkfAnalyzer::new(k, &obs, &lc).unwrap();
        let forecast = Ensemble::from_members(&members).unwrap();
        let got = an.update_with_perturbations(&forecast, &y, &eps.concat()).unwrap();
        let want = dense_enkf(&members, &grids, &r, loc, &y, &eps);
        for (i, w) in want.iter().enumerate() {
            worst = worst.max(max_diff(got.member(i), w));
        }
    }
    (count, worst)
}

/// Random control instances (K in 5..=8, N in 2..=5, one or two triggers,
/// every sparsifier except random selection, AOEI on and off) through
/// `estimate_control`; returns the case count and the largest difference.
pub fn pipeline_oracle_cases(seed: u64, count: usize) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let mut worst = 0.0_f64;
    for case in 0..count {
        let k = 5 + case % 4;
        let n = 2 + case % 4;
        let cfg = small_model(k);
        let analysis = random_members(&mut rng, n, k, 5.0, 0.5 + (case % 3) as f64 * 0.5);
        let t = 1 + case % 2;
        let (lc, lambda) = match case % 4 {
            0 => (None, None),
            1 => (Some(1.0 + (case % 3) as f64), None),
            2 => (None, Some(0.25 + 0.25 * (case % 4) as f64)),
            _ => (None, Some(1.0)),
        };
        let sparsifier = match (lc, lambda) {
            (Some(l), _) => Sparsifier::ControlLocalization { lc: l },
            (_, Some(l)) => Sparsifier::Thresholding { lambda_frac: l },
            _ => Sparsifier::None,
        };
        let threshold = threshold_for(&analysis, &cfg, 4, t);
        let p = ControlProblem {
            trigger_threshold: threshold,
            reference_value: threshold - 0.5,
            weight_sd: [0.05, 0.3, 1.0][case % 3],
            aoei: case % 5 < 2,
            ..ControlProblem::default()
        };
        let oracle = dense_control(&analysis, &cfg, &p, lc, lambda);
        let a = Ensemble::from_members(&analysis).unwrap();
        let got = estimate_control(&a, &cfg, &p, &sparsifier, &mut unused).unwrap();
        let want: Vec<usize> = oracle.trig.iter().map(|g| g + 1).collect();
        if got.trigger.grids != want {
            return (case, f64::INFINITY);
        }
        worst = worst.max(max_diff(&got.perturbation.delta, &oracle.delta));
    }
    (count, worst)
}
