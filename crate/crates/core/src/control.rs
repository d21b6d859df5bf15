//! Ensemble Kalman control: the reference value is assimilated as a
//! pseudo-observation at the end of the control horizon, and the smoother
//! gain maps the resulting innovation back to a perturbation at analysis
//! time.
//!
//! Per-cycle order: extended forecast, trigger detection, optional adaptive
//! inflation of the pseudo-observation variances, gain (masked when the
//! control localization sparsifier is active), perturbation, then
//! thresholding or random selection of its entries.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_stats, forecast, ring_distance_0, right_solve_spd, Ensemble};
use crate::error::{Error, Result};
use crate::lorenz96::{ModelConfig, StateVector};

/// How the perturbation is made sparse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sparsifier {
    /// Perturb every grid point.
    None,
    /// Boxcar mask on the gain: grid `i` may respond to trigger `j` only if
    /// `d(i, j) < lc`.
    ControlLocalization { lc: f64 },
    /// Zero entries smaller than `lambda_frac` times the largest magnitude.
    Thresholding { lambda_frac: f64 },
    /// Keep `n_l` entries chosen uniformly at random.
    RandomSelection { n_l: usize },
}

impl Sparsifier {
    pub fn validate(&self, k: usize) -> Result<()> {
        match *self {
            Sparsifier::None => Ok(()),
            Sparsifier::ControlLocalization { lc } if !(lc >= 1.0) => {
                Err(Error::Invalid(format!("sparsifier.lc must be >= 1, got {lc}")))
            }
            Sparsifier::Thresholding { lambda_frac } if !(lambda_frac > 0.0 && lambda_frac <= 1.0) => Err(
                Error::Invalid(format!("sparsifier.lambda_frac must be in (0, 1], got {lambda_frac}")),
            ),
            Sparsifier::RandomSelection { n_l } if n_l == 0 || n_l > k => {
                Err(Error::Invalid(format!("sparsifier.n_l must be in 1..={k}, got {n_l}")))
            }
            _ => Ok(()),
        }
    }

    /// Short label used in reports: method name and its scale parameter.
    pub fn label(&self) -> (&'static str, String) {
        match *self {
            Sparsifier::None => ("none", String::new()),
            Sparsifier::ControlLocalization { lc } => ("localization", lc.to_string()),
            Sparsifier::Thresholding { lambda_frac } => ("thresholding", lambda_frac.to_string()),
            Sparsifier::RandomSelection { n_l } => ("random", n_l.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRule {
    /// Control when at least one grid exceeds the threshold.
    #[default]
    AtLeastOne,
    /// Control only when two or more grids exceed it.
    AtLeastTwo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlProblem {
    /// Control horizon in model steps.
    pub horizon_steps: usize,
    /// A grid triggers when the horizon ensemble mean is strictly above this.
    pub trigger_threshold: f64,
    /// Reference value assimilated at every triggered grid.
    pub reference_value: f64,
    /// Standard deviation of the pseudo-observation error (the floor when
    /// adaptive inflation is on).
    pub weight_sd: f64,
    pub aoei: bool,
    pub trigger_rule: TriggerRule,
    /// Also apply the control localization mask to the trigger-space
    /// innovation covariance.
    pub localize_innovation: bool,
}

impl Default for ControlProblem {
    fn default() -> Self {
        Self {
            horizon_steps: 4,
            trigger_threshold: 12.0,
            reference_value: 12.0,
            weight_sd: 0.1,
            aoei: false,
            trigger_rule: TriggerRule::AtLeastOne,
            localize_innovation: false,
        }
    }
}

impl ControlProblem {
    pub fn base_variance(&self) -> f64 {
        self.weight_sd * self.weight_sd
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::Invalid("control.horizon_steps must be >= 1".into()));
        }
        if !(self.base_variance() > 0.0 && self.base_variance().is_finite()) {
            return Err(Error::Invalid(format!("control.weight_sd must be > 0, got {}", self.weight_sd)));
        }
        if self.trigger_threshold.is_nan() {
            return Err(Error::Invalid("control.trigger_threshold must not be NaN".into()));
        }
        if !self.reference_value.is_finite() {
            return Err(Error::Invalid("control.reference_value must be finite".into()));
        }
        Ok(())
    }
}

/// Grids (1-based) where the horizon mean exceeds the threshold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TriggerSet {
    pub grids: Vec<usize>,
}

impl TriggerSet {
    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }
}

/// `x^c - mean(x^a)`: the vector added to nature and to every analysis member.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPerturbation {
    pub delta: StateVector,
}

impl ControlPerturbation {
    pub fn zero(k: usize) -> Self {
        Self {
            delta: StateVector::zeros(k),
        }
    }

    pub fn new(delta: Vec<f64>) -> Result<Self> {
        Ok(Self {
            delta: StateVector::new(delta)?,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Number of nonzero entries.
    pub fn support(&self) -> usize {
        self.delta.iter().filter(|&&v| v != 0.0).count()
    }
}

pub fn extended_forecast(analysis: &Ensemble, horizon_steps: usize, cfg: &ModelConfig) -> Result<Ensemble> {
    forecast(analysis, horizon_steps, cfg)
}

pub fn detect_trigger(horizon_mean: &[f64], threshold: f64, rule: TriggerRule) -> TriggerSet {
    let grids: Vec<usize> = horizon_mean
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, _)| i + 1)
        .collect();
    match rule {
        TriggerRule::AtLeastTwo if grids.len() < 2 => TriggerSet::default(),
        _ => TriggerSet { grids },
    }
}

/// Adaptive inflation of the pseudo-observation variances:
/// `max(floor, innovation^2 - horizon variance)` per trigger.
pub fn aoei_variances(innovation: &[f64], horizon_variance: &[f64], floor: f64) -> Vec<f64> {
    innovation
        .iter()
        .zip(horizon_variance)
        .map(|(&d, &v)| floor.max(d * d - v))
        .collect()
}

/// Smoother gain (K x |trig|, row-major) from the analysis-horizon cross
/// covariance and the horizon covariance at the triggered grids.
pub fn control_gain(
    analysis: &Ensemble,
    horizon: &Ensemble,
    trig: &TriggerSet,
    variances: &[f64],
    sparsifier: &Sparsifier,
    localize_innovation: bool,
) -> Result<Vec<f64>> {
    if trig.is_empty() {
        return Err(Error::Invalid("control gain requested with no triggered grids".into()));
    }
    if analysis.n() != horizon.n() || analysis.k() != horizon.k() {
        return Err(Error::Dimension {
            context: "analysis/horizon ensembles",
            expected: analysis.n() * analysis.k(),
            actual: horizon.n() * horizon.k(),
        });
    }
    let t = trig.len();
    if variances.len() != t {
        return Err(Error::Dimension {
            context: "pseudo-observation variances",
            expected: t,
            actual: variances.len(),
        });
    }
    let (k, n) = (analysis.k(), analysis.n());
    let idx: Vec<usize> = trig.grids.iter().map(|g| g - 1).collect();
    let a_mean = analysis.mean();
    let h_mean = horizon.mean();
    let mut h_anom = vec![0.0; n * t];
    for (i, member) in horizon.members().enumerate() {
        for (j, &g) in idx.iter().enumerate() {
            h_anom[i * t + j] = member[g] - h_mean[g];
        }
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let mut cross = vec![0.0; k * t];
    for (i, member) in analysis.members().enumerate() {
        let h = &h_anom[i * t..(i + 1) * t];
        for r in 0..k {
            let a = member[r] - a_mean[r];
            for (c, &hv) in cross[r * t..(r + 1) * t].iter_mut().zip(h) {
                *c += a * hv;
            }
        }
    }
    cross.iter_mut().for_each(|c| *c *= scale);

    let mut innov = DMatrix::<f64>::zeros(t, t);
    for i in 0..n {
        let h = &h_anom[i * t..(i + 1) * t];
        for a in 0..t {
            for b in 0..t {
                innov[(a, b)] += h[a] * h[b];
            }
        }
    }
    innov.iter_mut().for_each(|v| *v *= scale);

    if let Sparsifier::ControlLocalization { lc } = *sparsifier {
        for r in 0..k {
            for (j, &g) in idx.iter().enumerate() {
                if ring_distance_0(r, g, k) as f64 >= lc {
                    cross[r * t + j] = 0.0;
                }
            }
        }
        if localize_innovation {
            for (a, &ga) in idx.iter().enumerate() {
                for (b, &gb) in idx.iter().enumerate() {
                    if ring_distance_0(ga, gb, k) as f64 >= lc {
                        innov[(a, b)] = 0.0;
                    }
                }
            }
        }
    }
    for (a, &v) in variances.iter().enumerate() {
        innov[(a, a)] += v;
    }
    right_solve_spd(&cross, k, innov)
}

/// `gain (reference - horizon mean at the triggers)`.
pub fn compute_perturbation(gain: &[f64], horizon_mean_at_trig: &[f64], reference: &[f64]) -> Result<ControlPerturbation> {
    let t = reference.len();
    if horizon_mean_at_trig.len() != t {
        return Err(Error::Dimension {
            context: "horizon mean at triggers",
            expected: t,
            actual: horizon_mean_at_trig.len(),
        });
    }
    if t == 0 || gain.len() % t != 0 {
        return Err(Error::Dimension {
            context: "control gain",
            expected: t,
            actual: gain.len(),
        });
    }
    let innovation: Vec<f64> = reference.iter().zip(horizon_mean_at_trig).map(|(r, h)| r - h).collect();
    let delta = gain
        .chunks_exact(t)
        .map(|row| row.iter().zip(&innovation).map(|(g, d)| g * d).sum())
        .collect();
    ControlPerturbation::new(delta)
}

/// Zero entries with `|x| < lambda_frac * max|x|`; larger ones are kept verbatim.
pub fn threshold_sparsify(delta: &ControlPerturbation, lambda_frac: f64) -> ControlPerturbation {
    let tau = lambda_frac * delta.max_abs();
    let mut out = delta.clone();
    for v in out.delta.iter_mut() {
        if v.abs() < tau {
            *v = 0.0;
        }
    }
    out
}

/// Keeps `n_l` uniformly chosen entries and zeroes the rest.
pub fn random_sparsify<R: Rng>(delta: &ControlPerturbation, n_l: usize, rng: &mut R) -> ControlPerturbation {
    let k = delta.delta.len();
    let keep = rand::seq::index::sample(rng, k, n_l.min(k));
    let mut out = ControlPerturbation::zero(k);
    for i in keep.iter() {
        out.delta[i] = delta.delta[i];
    }
    out
}

/// Adds `delta` to nature and to every analysis member.
pub fn apply_perturbation(nature: &mut [f64], analysis: &mut Ensemble, delta: &ControlPerturbation) {
    for (x, d) in nature.iter_mut().zip(delta.delta.iter()) {
        *x += d;
    }
    analysis.shift(&delta.delta);
}

/// Everything one control step decided.
#[derive(Clone, Debug)]
pub struct ControlOutcome {
    pub trigger: TriggerSet,
    pub perturbation: ControlPerturbation,
    /// Pseudo-observation variances used for the gain, one per trigger.
    pub variances: Vec<f64>,
    /// `reference - horizon mean` at each trigger.
    pub innovation: Vec<f64>,
}

/// Extended forecast through sparsification for one analysis ensemble.
/// `rng` is only consumed by random selection.
pub fn estimate_control<R: Rng>(
    analysis: &Ensemble,
    model: &ModelConfig,
    problem: &ControlProblem,
    sparsifier: &Sparsifier,
    rng: &mut R,
) -> Result<ControlOutcome> {
    let horizon = extended_forecast(analysis, problem.horizon_steps, model)?;
    let (h_mean, h_var) = ensemble_stats(&horizon);
    let trigger = detect_trigger(&h_mean, problem.trigger_threshold, problem.trigger_rule);
    if trigger.is_empty() {
        return Ok(ControlOutcome {
            trigger,
            perturbation: ControlPerturbation::zero(analysis.k()),
            variances: Vec::new(),
            innovation: Vec::new(),
        });
    }
    let at_trig: Vec<f64> = trigger.grids.iter().map(|&g| h_mean[g - 1]).collect();
    let reference = vec![problem.reference_value; trigger.len()];
    let innovation: Vec<f64> = reference.iter().zip(&at_trig).map(|(r, h)| r - h).collect();
    let variances = if problem.aoei {
        let var_at: Vec<f64> = trigger.grids.iter().map(|&g| h_var[g - 1]).collect();
        aoei_variances(&innovation, &var_at, problem.base_variance())
    } else {
        vec![problem.base_variance(); trigger.len()]
    };
    let gain = control_gain(analysis, &horizon, &trigger, &variances, sparsifier, problem.localize_innovation)?;
    let raw = compute_perturbation(&gain, &at_trig, &reference)?;
    let perturbation = match *sparsifier {
        Sparsifier::Thresholding { lambda_frac } => threshold_sparsify(&raw, lambda_frac),
        Sparsifier::RandomSelection { n_l } => random_sparsify(&raw, n_l, rng),
        Sparsifier::None | Sparsifier::ControlLocalization { .. } => raw,
    };
    Ok(ControlOutcome {
        trigger,
        perturbation,
        variances,
        innovation,
    })
}
