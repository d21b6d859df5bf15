//! Stochastic ensemble Kalman filter with exponential covariance localization.
//!
//! Covariances are formed only in observation space (`P^b H^T` is K x m,
//! `H P^b H^T` is m x m); the K x K background covariance is never built.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz96::{check_finite, rk4_step_in_place, ModelConfig, Rk4Workspace, StateVector};

/// N members of length K stored member-major in one buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    k: usize,
    n: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn from_members(members: &[Vec<f64>]) -> Result<Self> {
        let n = members.len();
        if n < 2 {
            return Err(Error::Invalid(format!("ensemble needs at least 2 members, got {n}")));
        }
        let k = members[0].len();
        let mut data = Vec::with_capacity(n * k);
        for m in members {
            if m.len() != k {
                return Err(Error::Dimension {
                    context: "ensemble member",
                    expected: k,
                    actual: m.len(),
                });
            }
            check_finite(m)?;
            data.extend_from_slice(m);
        }
        Ok(Self { k, n, data })
    }

    /// `n` copies of `center` plus independent N(0, sd^2) noise per entry.
    pub fn perturbed_around<R: Rng>(center: &[f64], n: usize, sd: f64, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid(format!("ensemble needs at least 2 members, got {n}")));
        }
        let k = center.len();
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + sd * z);
            }
        }
        Ok(Self { k, n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn member(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn member_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn members(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn members_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.data.chunks_exact_mut(self.k)
    }

    pub fn mean(&self) -> StateVector {
        let mut mean = vec![0.0; self.k];
        for m in self.members() {
            for (a, &v) in mean.iter_mut().zip(m) {
                *a += v;
            }
        }
        let inv = 1.0 / self.n as f64;
        mean.iter_mut().for_each(|a| *a *= inv);
        StateVector::new(mean).expect("mean of finite members")
    }

    /// Member-major anomalies `x_i - mean`.
    pub(crate) fn anomalies(&self, mean: &[f64]) -> Vec<f64> {
        let mut a = self.data.clone();
        for m in a.chunks_exact_mut(self.k) {
            for (v, &c) in m.iter_mut().zip(mean) {
                *v -= c;
            }
        }
        a
    }

    /// Adds the same vector to every member.
    pub fn shift(&mut self, delta: &[f64]) {
        for m in self.members_mut() {
            for (v, &d) in m.iter_mut().zip(delta) {
                *v += d;
            }
        }
    }
}

/// Sample mean and unbiased (divisor N-1) per-grid variance.
pub fn ensemble_stats(e: &Ensemble) -> (StateVector, StateVector) {
    let mean = e.mean();
    let mut var = vec![0.0; e.k];
    for m in e.members() {
        for ((s, &v), &c) in var.iter_mut().zip(m).zip(mean.iter()) {
            let d = v - c;
            *s += d * d;
        }
    }
    let inv = 1.0 / (e.n as f64 - 1.0);
    var.iter_mut().for_each(|s| *s *= inv);
    (mean, StateVector::new(var).expect("finite variance"))
}

/// Advances every member `n_steps` RK4 steps. Members are independent, so
/// the result does not depend on how rayon schedules them.
pub fn forecast(analysis: &Ensemble, n_steps: usize, cfg: &ModelConfig) -> Result<Ensemble> {
    let mut out = analysis.clone();
    forecast_in_place(&mut out, n_steps, cfg)?;
    Ok(out)
}

pub fn forecast_in_place(ens: &mut Ensemble, n_steps: usize, cfg: &ModelConfig) -> Result<()> {
    if ens.k != cfg.k {
        return Err(Error::Dimension {
            context: "forecast",
            expected: cfg.k,
            actual: ens.k,
        });
    }
    if n_steps == 0 {
        return Ok(());
    }
    let k = ens.k;
    let outcomes: Vec<Result<()>> = ens
        .data
        .par_chunks_exact_mut(k)
        .with_min_len(4)
        .map_init(
            || Rk4Workspace::new(k),
            |ws, member| {
                for step in 1..=n_steps {
                    rk4_step_in_place(member, cfg, ws, step)?;
                }
                Ok(())
            },
        )
        .collect();
    for (member, r) in outcomes.into_iter().enumerate() {
        if let Err(Error::BlowUp { step, grid, value }) = r {
            return Err(Error::MemberBlowUp {
                member,
                step,
                grid,
                value,
            });
        }
        r?;
    }
    Ok(())
}

/// Observed grid points (1-based labels) with diagonal error variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    observed: Vec<usize>,
    variance: Vec<f64>,
}

impl ObservationModel {
    pub fn new(observed: Vec<usize>, variance: Vec<f64>, k: usize) -> Result<Self> {
        if observed.len() != variance.len() {
            return Err(Error::Dimension {
                context: "observation variances",
                expected: observed.len(),
                actual: variance.len(),
            });
        }
        if observed.is_empty() {
            return Err(Error::Invalid("observation network is empty".into()));
        }
        for (i, &g) in observed.iter().enumerate() {
            if g == 0 || g > k {
                return Err(Error::GridIndex { index: g, k });
            }
            if observed[..i].contains(&g) {
                return Err(Error::Invalid(format!("grid {g} observed twice")));
            }
        }
        if let Some(v) = variance.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("observation variance must be > 0, got {v}")));
        }
        Ok(Self { observed, variance })
    }

    /// Every even grid label `2, 4, ..., K` with a shared variance.
    pub fn even_grids(k: usize, variance: f64) -> Result<Self> {
        let observed: Vec<usize> = (2..=k).step_by(2).collect();
        let n = observed.len();
        Self::new(observed, vec![variance; n], k)
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// 1-based grid labels.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn variances(&self) -> &[f64] {
        &self.variance
    }

    /// H x: the state at the observed points.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.observed.iter().map(|&g| x[g - 1]).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub enabled: bool,
    /// Scale L in grid-distance units.
    pub scale: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: 2.0,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Invalid(format!("localization.scale must be > 0, got {}", self.scale)));
        }
        Ok(())
    }
}

/// Grid distance on a ring of `k` points, for 1-based labels.
pub fn ring_distance(i: usize, j: usize, k: usize) -> Result<usize> {
    for g in [i, j] {
        if g == 0 || g > k {
            return Err(Error::GridIndex { index: g, k });
        }
    }
    Ok(ring_distance_0(i - 1, j - 1, k))
}

#[inline]
pub(crate) fn ring_distance_0(i: usize, j: usize, k: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(k - d)
}

/// `exp(-d / L)`; 1 everywhere when localization is off.
pub fn localization_weight(d: f64, cfg: &LocalizationConfig) -> f64 {
    if cfg.enabled {
        (-d / cfg.scale).exp()
    } else {
        1.0
    }
}

/// Precomputed localization weights and the observation operator for one
/// network; reused across cycles.
#[derive(Clone, Debug)]
pub struct EnkfAnalyzer {
    k: usize,
    obs: ObservationModel,
    /// K x m, row-major: grid vs observation.
    rho_state_obs: Vec<f64>,
    /// m x m: observation vs observation.
    rho_obs_obs: Vec<f64>,
    /// Multiplicative inflation of the forecast anomalies; 1.0 disables it.
    inflation: f64,
}

impl EnkfAnalyzer {
    pub fn new(k: usize, obs: &ObservationModel, loc: &LocalizationConfig) -> Result<Self> {
        loc.validate()?;
        if let Some(&g) = obs.observed().iter().find(|&&g| g > k) {
            return Err(Error::GridIndex { index: g, k });
        }
        let m = obs.len();
        let mut rho_state_obs = vec![0.0; k * m];
        for i in 0..k {
            for (j, &g) in obs.observed().iter().enumerate() {
                rho_state_obs[i * m + j] = localization_weight(ring_distance_0(i, g - 1, k) as f64, loc);
            }
        }
        let mut rho_obs_obs = vec![0.0; m * m];
        for (a, &ga) in obs.observed().iter().enumerate() {
            for (b, &gb) in obs.observed().iter().enumerate() {
                rho_obs_obs[a * m + b] = localization_weight(ring_distance_0(ga - 1, gb - 1, k) as f64, loc);
            }
        }
        Ok(Self {
            k,
            obs: obs.clone(),
            rho_state_obs,
            rho_obs_obs,
            inflation: 1.0,
        })
    }

    pub fn with_inflation(mut self, factor: f64) -> Self {
        self.inflation = factor;
        self
    }

    pub fn observation_model(&self) -> &ObservationModel {
        &self.obs
    }

    /// Localized gain `(rho o P^b H^T)(rho o H P^b H^T + R)^{-1}`, K x m row-major.
    pub fn gain(&self, forecast: &Ensemble) -> Result<Vec<f64>> {
        if forecast.k != self.k {
            return Err(Error::Dimension {
                context: "enkf gain",
                expected: self.k,
                actual: forecast.k,
            });
        }
        let (k, n, m) = (self.k, forecast.n, self.obs.len());
        let mean = forecast.mean();
        let anom = forecast.anomalies(&mean);
        let idx: Vec<usize> = self.obs.observed().iter().map(|g| g - 1).collect();
        // N x m projected anomalies
        let mut hanom = vec![0.0; n * m];
        for i in 0..n {
            for (j, &g) in idx.iter().enumerate() {
                hanom[i * m + j] = anom[i * k + g];
            }
        }
        let scale = self.inflation * self.inflation / (n as f64 - 1.0);
        let mut cross = vec![0.0; k * m];
        for i in 0..n {
            let a = &anom[i * k..(i + 1) * k];
            let h = &hanom[i * m..(i + 1) * m];
            for (r, &av) in a.iter().enumerate() {
                let row = &mut cross[r * m..(r + 1) * m];
                for (c, &hv) in row.iter_mut().zip(h) {
                    *c += av * hv;
                }
            }
        }
        for (c, &rho) in cross.iter_mut().zip(&self.rho_state_obs) {
            *c *= scale * rho;
        }
        let mut innov = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let h = &hanom[i * m..(i + 1) * m];
            for a in 0..m {
                for b in 0..m {
                    innov[(a, b)] += h[a] * h[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                innov[(a, b)] *= scale * self.rho_obs_obs[a * m + b];
            }
            innov[(a, a)] += self.obs.variances()[a];
        }
        right_solve_spd(&cross, k, innov)
    }

    /// Updates each member against `obs + perturbations[i]` (N x m row-major).
    /// Zero perturbations give the deterministic-observation variant.
    pub fn update_with_perturbations(
        &self,
        forecast: &Ensemble,
        obs: &[f64],
        perturbations: &[f64],
    ) -> Result<Ensemble> {
        let m = self.obs.len();
        if obs.len() != m {
            return Err(Error::Dimension {
                context: "observation vector",
                expected: m,
                actual: obs.len(),
            });
        }
        if perturbations.len() != forecast.n * m {
            return Err(Error::Dimension {
                context: "observation perturbations",
                expected: forecast.n * m,
                actual: perturbations.len(),
            });
        }
        let gain = self.gain(forecast)?;
        let k = self.k;
        let mut out = forecast.clone();
        let mut d = vec![0.0; m];
        for (i, member) in out.members_mut().enumerate() {
            let eps = &perturbations[i * m..(i + 1) * m];
            for (j, &g) in self.obs.observed().iter().enumerate() {
                d[j] = obs[j] + eps[j] - member[g - 1];
            }
            for r in 0..k {
                let row = &gain[r * m..(r + 1) * m];
                member[r] += row.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Stochastic EnKF analysis: perturbations ~ N(0, R) drawn member by
    /// member, observation by observation, from `rng`.
    pub fn analyze<R: Rng>(&self, forecast: &Ensemble, obs: &[f64], rng: &mut R) -> Result<Ensemble> {
        let pert = draw_perturbations(forecast.n, self.obs.variances(), rng);
        self.update_with_perturbations(forecast, obs, &pert)
    }
}

pub(crate) fn draw_perturbations<R: Rng>(n: usize, variances: &[f64], rng: &mut R) -> Vec<f64> {
    let sds: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    let mut out = Vec::with_capacity(n * sds.len());
    for _ in 0..n {
        for &sd in &sds {
            let z: f64 = rng.sample(StandardNormal);
            out.push(sd * z);
        }
    }
    out
}

/// Solves `X S = B` for X (rows x m) with S symmetric positive definite.
pub(crate) fn right_solve_spd(b: &[f64], rows: usize, s: DMatrix<f64>) -> Result<Vec<f64>> {
    let m = s.nrows();
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => return Err(Error::Singular { condition: condition_estimate(&s) }),
    };
    // X S = B  <=>  S X^T = B^T (S symmetric)
    let bt = DMatrix::from_row_slice(rows, m, b).transpose();
    let xt = chol.solve(&bt);
    if xt.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { condition: condition_estimate(&s) });
    }
    let mut out = vec![0.0; rows * m];
    for r in 0..rows {
        for c in 0..m {
            out[r * m + c] = xt[(c, r)];
        }
    }
    Ok(out)
}

fn condition_estimate(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l.abs());
        hi = hi.max(l.abs());
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// One-shot stochastic analysis; see [`EnkfAnalyzer`] for the cycled form.
pub fn enkf_analysis<R: Rng>(
    forecast: &Ensemble,
    obs: &[f64],
    obs_model: &ObservationModel,
    loc: &LocalizationConfig,
    rng: &mut R,
) -> Result<Ensemble> {
    EnkfAnalyzer::new(forecast.k, obs_model, loc)?.analyze(forecast, obs, rng)
}
