//! Lorenz 96 dynamics on a periodic ring and fixed-step RK4 integration.
//!
//! Arrays are 0-based; grid labels reported to users are 1-based
//! (`k = index + 1`).

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Any |X_k| above this aborts the integration.
pub const BLOW_UP_BOUND: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of grid points on the ring.
    pub k: usize,
    /// Forcing.
    pub forcing: f64,
    /// Integration timestep in model time units.
    pub dt: f64,
    /// Standard deviation of the additive model-error process. Perfect-model
    /// twin experiments only; must be zero.
    pub model_error_sd: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 40,
            forcing: 8.0,
            dt: 0.05,
            model_error_sd: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 4 {
            return Err(Error::Invalid(format!("model.k must be >= 4, got {}", self.k)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Invalid(format!("model.dt must be > 0, got {}", self.dt)));
        }
        if !self.forcing.is_finite() {
            return Err(Error::Invalid("model.forcing must be finite".into()));
        }
        if self.model_error_sd != 0.0 {
            return Err(Error::Invalid(
                "model.model_error_sd must be 0 (only perfect-model experiments are supported)".into(),
            ));
        }
        Ok(())
    }
}

/// A Lorenz 96 state: K values on a periodic ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn constant(k: usize, value: f64) -> Self {
        Self(vec![value; k])
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Cyclic shift by `s` places: `out[(i + s) % K] = self[i]`.
    pub fn rotate(&self, s: usize) -> Self {
        let mut v = self.0.clone();
        let k = v.len();
        v.rotate_right(s % k);
        Self(v)
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<StateVector> for Vec<f64> {
    fn from(s: StateVector) -> Self {
        s.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteState { grid: i + 1 }),
        None => Ok(()),
    }
}

/// dX_k/dt = (X_{k+1} - X_{k-2}) X_{k-1} - X_k + F, written into `out`.
pub fn tendency_into(state: &[f64], forcing: f64, out: &mut [f64]) {
    let k = state.len();
    debug_assert!(k >= 4 && out.len() == k);
    // the two wrapped-around heads and the wrapped tail are handled separately
    out[0] = (state[1] - state[k - 2]) * state[k - 1] - state[0] + forcing;
    out[1] = (state[2] - state[k - 1]) * state[0] - state[1] + forcing;
    for i in 2..k - 1 {
        out[i] = (state[i + 1] - state[i - 2]) * state[i - 1] - state[i] + forcing;
    }
    out[k - 1] = (state[0] - state[k - 3]) * state[k - 2] - state[k - 1] + forcing;
}

pub fn tendency(state: &[f64], cfg: &ModelConfig) -> Result<StateVector> {
    if state.len() != cfg.k {
        return Err(Error::Dimension {
            context: "tendency",
            expected: cfg.k,
            actual: state.len(),
        });
    }
    check_finite(state)?;
    let mut out = vec![0.0; cfg.k];
    tendency_into(state, cfg.forcing, &mut out);
    Ok(StateVector(out))
}

/// Scratch buffers for allocation-free RK4 stepping.
#[derive(Clone, Debug)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(k: usize) -> Self {
        Self {
            k1: vec![0.0; k],
            k2: vec![0.0; k],
            k3: vec![0.0; k],
            k4: vec![0.0; k],
            tmp: vec![0.0; k],
        }
    }
}

/// One classical RK4 step of `dx/dt = f(x)` in place.
pub fn rk4_step_with<F>(x: &mut [f64], dt: f64, ws: &mut Rk4Workspace, mut f: F)
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let half = 0.5 * dt;
    f(x, &mut ws.k1);
    for i in 0..n {
        ws.tmp[i] = x[i] + half * ws.k1[i];
    }
    f(&ws.tmp, &mut ws.k2);
    for i in 0..n {
        ws.tmp[i] = x[i] + half * ws.k2[i];
    }
    f(&ws.tmp, &mut ws.k3);
    for i in 0..n {
        ws.tmp[i] = x[i] + dt * ws.k3[i];
    }
    f(&ws.tmp, &mut ws.k4);
    let sixth = dt / 6.0;
    for i in 0..n {
        x[i] += sixth * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Advances `x` by one Lorenz 96 RK4 step; the returned error carries
/// `step` so callers can report where a trajectory failed.
pub fn rk4_step_in_place(
    x: &mut [f64],
    cfg: &ModelConfig,
    ws: &mut Rk4Workspace,
    step: usize,
) -> Result<()> {
    let forcing = cfg.forcing;
    rk4_step_with(x, cfg.dt, ws, |s, out| tendency_into(s, forcing, out));
    check_blow_up(x, step)
}

pub(crate) fn check_blow_up(x: &[f64], step: usize) -> Result<()> {
    for (i, &v) in x.iter().enumerate() {
        if !(v.abs() <= BLOW_UP_BOUND) {
            return Err(Error::BlowUp {
                step,
                grid: i + 1,
                value: v,
            });
        }
    }
    Ok(())
}

pub fn rk4_step(state: &[f64], cfg: &ModelConfig) -> Result<StateVector> {
    if state.len() != cfg.k {
        return Err(Error::Dimension {
            context: "rk4_step",
            expected: cfg.k,
            actual: state.len(),
        });
    }
    check_finite(state)?;
    let mut x = state.to_vec();
    let mut ws = Rk4Workspace::new(cfg.k);
    rk4_step_in_place(&mut x, cfg, &mut ws, 0)?;
    Ok(StateVector(x))
}

/// Trajectory of `n_steps + 1` states starting with `state`.
pub fn integrate(state: &[f64], n_steps: usize, cfg: &ModelConfig) -> Result<Vec<StateVector>> {
    if state.len() != cfg.k {
        return Err(Error::Dimension {
            context: "integrate",
            expected: cfg.k,
            actual: state.len(),
        });
    }
    check_finite(state)?;
    let mut ws = Rk4Workspace::new(cfg.k);
    let mut traj = Vec::with_capacity(n_steps + 1);
    let mut x = state.to_vec();
    traj.push(StateVector(x.clone()));
    for step in 1..=n_steps {
        rk4_step_in_place(&mut x, cfg, &mut ws, step)?;
        traj.push(StateVector(x.clone()));
    }
    Ok(traj)
}

/// Advances `state` `n_steps` steps without keeping the trajectory.
pub fn advance(state: &mut [f64], n_steps: usize, cfg: &ModelConfig) -> Result<()> {
    let mut ws = Rk4Workspace::new(cfg.k);
    for step in 1..=n_steps {
        rk4_step_in_place(state, cfg, &mut ws, step)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, forcing: f64) -> ModelConfig {
        ModelConfig {
            k,
            forcing,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn fixed_point_has_zero_tendency() {
        let c = cfg(40, 8.0);
        let d = tendency(&StateVector::constant(40, 8.0), &c).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_evaluated_k4() {
        // dX1 = (X2 - X3) X4 - X1, dX2 = (X3 - X4) X1 - X2,
        // dX3 = (X4 - X1) X2 - X3, dX4 = (X1 - X2) X3 - X4
        let d = tendency(&[1.0, 2.0, 3.0, 4.0], &cfg(4, 0.0)).unwrap();
        assert_eq!(&d[..], &[-5.0, -3.0, 3.0, -7.0]);
    }

    #[test]
    fn zero_state_gives_forcing() {
        let d = tendency(&[0.0; 40], &cfg(40, 8.0)).unwrap();
        assert!(d.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut s = vec![1.0; 8];
        s[3] = f64::NAN;
        assert!(matches!(
            tendency(&s, &cfg(8, 8.0)),
            Err(Error::NonFiniteState { grid: 4 })
        ));
        assert!(rk4_step(&s, &cfg(8, 8.0)).is_err());
    }

    #[test]
    fn fixed_point_is_rk4_invariant() {
        let c = cfg(40, 8.0);
        let x = rk4_step(&[8.0; 40], &c).unwrap();
        assert!(x.iter().all(|&v| v == 8.0));
    }

    #[test]
    fn rk4_on_linear_decay_matches_taylor_polynomial() {
        let h: f64 = 0.05;
        let expected = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let mut x = [1.0];
        let mut ws = Rk4Workspace::new(1);
        rk4_step_with(&mut x, h, &mut ws, |s, out| out[0] = -s[0]);
        assert!((x[0] - expected).abs() < 1e-12, "{} vs {}", x[0], expected);
        assert!((expected - 0.951_229).abs() < 1e-6);
    }

    #[test]
    fn rk4_is_fourth_order() {
        // Start somewhere on the attractor, compare against many tiny steps.
        let base = cfg(40, 8.0);
        let mut x0 = vec![8.0; 40];
        x0[19] += 0.01;
        advance(&mut x0, 2000, &base).unwrap();

        let one_step = |dt: f64| {
            let c = ModelConfig { dt, ..base };
            rk4_step(&x0, &c).unwrap()
        };
        let reference = |dt: f64| {
            let c = ModelConfig { dt: dt / 100.0, ..base };
            let mut x = x0.clone();
            advance(&mut x, 100, &c).unwrap();
            x
        };
        let err = |dt: f64| {
            let a = one_step(dt);
            let r = reference(dt);
            a.iter().zip(&r).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        // local error is O(h^5); the ratio under halving is 32 for one step,
        // but we compare the accumulated error over a fixed span of 0.05 to get 2^4
        let span = 0.05;
        let global = |h: f64| {
            let n = (span / h).round() as usize;
            let c = ModelConfig { dt: h, ..base };
            let mut x = x0.clone();
            advance(&mut x, n, &c).unwrap();
            let mut r = x0.clone();
            let cr = ModelConfig { dt: h / 100.0, ..base };
            advance(&mut r, n * 100, &cr).unwrap();
            x.iter().zip(&r).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        let ratio = global(0.025) / global(0.0125);
        assert!((ratio - 16.0).abs() < 0.2 * 16.0, "global ratio {ratio}");
        // the single-step error should shrink at least at 4th order too
        assert!(err(0.05) / err(0.025) > 16.0 * 0.8);
    }

    #[test]
    fn integrate_zero_steps_is_identity() {
        let c = cfg(8, 8.0);
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let t = integrate(&x, 0, &c).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(&t[0][..], &x[..]);
    }

    #[test]
    fn integrate_matches_repeated_steps() {
        let c = cfg(40, 8.0);
        let mut x = vec![8.0; 40];
        x[0] = 8.5;
        let t = integrate(&x, 4, &c).unwrap();
        assert_eq!(t.len(), 5);
        let mut y = StateVector::new(x).unwrap();
        for s in &t[1..] {
            y = rk4_step(&y, &c).unwrap();
            assert_eq!(&y[..], &s[..]);
        }
        assert!((4.0 * c.dt - 0.2).abs() < 1e-15);
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        // huge forcing drives values past the bound within a few steps
        let c = ModelConfig { forcing: 1e9, ..cfg(8, 0.0) };
        let err = integrate(&[0.0; 8], 50, &c).unwrap_err();
        assert!(matches!(err, Error::BlowUp { step: 1, .. }), "{err}");
    }

    #[test]
    fn validate_rejects_bad_configs() {
        assert!(cfg(3, 8.0).validate().is_err());
        assert!(ModelConfig { dt: 0.0, ..cfg(40, 8.0) }.validate().is_err());
        assert!(ModelConfig { model_error_sd: 0.1, ..cfg(40, 8.0) }.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
