//! Twin-experiment driver: nature run, EnKF cycling, control, and the
//! metrics computed from the controlled and uncontrolled natures.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{apply_perturbation, estimate_control, ControlProblem, Sparsifier};
use crate::ensemble::{forecast_in_place, Ensemble, EnkfAnalyzer, LocalizationConfig, ObservationModel};
use crate::error::{Error, Result};
use crate::lorenz96::{advance, rk4_step_in_place, ModelConfig, Rk4Workspace, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    /// Observe grid labels divisible by this (2 = even grids).
    pub every: usize,
    /// Observation error variance, shared by all observations.
    pub variance: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self { every: 2, variance: 1.0 }
    }
}

impl ObsConfig {
    pub fn observation_model(&self, k: usize) -> Result<ObservationModel> {
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Invalid(format!("obs.variance must be > 0, got {}", self.variance)));
        }
        if self.every == 0 || self.every > k {
            return Err(Error::Invalid(format!("obs.every must be in 1..={k}, got {}", self.every)));
        }
        let grids: Vec<usize> = (self.every..=k).step_by(self.every).collect();
        let n = grids.len();
        ObservationModel::new(grids, vec![self.variance; n], k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Ensemble size.
    #[serde(alias = "N")]
    pub n: usize,
    /// Standard deviation of the initial member noise around nature.
    pub initial_spread: f64,
    /// Multiplicative anomaly inflation in the EnKF; 1.0 = none.
    pub inflation: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n: 40,
            initial_spread: 1.0,
            inflation: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of the run is derived from it.
    pub seed: u64,
    pub spin_up_steps: usize,
    pub eval_steps: usize,
    /// Free-run steps that carry the seeded nature onto the attractor.
    pub nature_transient_steps: usize,
    /// First evaluation cycle (0-based) kept in the per-cycle log.
    pub log_start: usize,
    /// Number of logged cycles; 0 disables per-cycle logging.
    pub log_len: usize,
    pub divergence_rmse: f64,
    pub divergence_cycles: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            spin_up_steps: 14_600,
            eval_steps: 146_000,
            nature_transient_steps: 10_000,
            log_start: 0,
            log_len: 0,
            divergence_rmse: 10.0,
            divergence_cycles: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub obs: ObsConfig,
    pub localization: LocalizationConfig,
    pub ensemble: EnsembleConfig,
    pub control: ControlProblem,
    pub sparsifier: Sparsifier,
    pub run: RunConfig,
}

fn default_sparsifier() -> Sparsifier {
    Sparsifier::Thresholding { lambda_frac: 0.5 }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            obs: ObsConfig::default(),
            localization: LocalizationConfig::default(),
            ensemble: EnsembleConfig::default(),
            control: ControlProblem::default(),
            sparsifier: default_sparsifier(),
            run: RunConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.obs.observation_model(self.model.k)?;
        self.localization.validate()?;
        if self.ensemble.n < 2 {
            return Err(Error::Invalid(format!("ensemble.n must be >= 2, got {}", self.ensemble.n)));
        }
        if !(self.ensemble.initial_spread >= 0.0 && self.ensemble.initial_spread.is_finite()) {
            return Err(Error::Invalid("ensemble.initial_spread must be >= 0".into()));
        }
        if !(self.ensemble.inflation >= 1.0 && self.ensemble.inflation.is_finite()) {
            return Err(Error::Invalid("ensemble.inflation must be >= 1".into()));
        }
        self.control.validate()?;
        self.sparsifier.validate(self.model.k)?;
        if self.run.eval_steps == 0 {
            return Err(Error::Invalid("run.eval_steps must be >= 1".into()));
        }
        if self.run.log_len > 0 && self.run.log_start + self.run.log_len > self.run.eval_steps {
            return Err(Error::Invalid("run.log_start + run.log_len exceeds run.eval_steps".into()));
        }
        if self.run.divergence_cycles == 0 || !(self.run.divergence_rmse > 0.0) {
            return Err(Error::Invalid("run.divergence_cycles and run.divergence_rmse must be positive".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.run.spin_up_steps + self.run.eval_steps
    }

    /// Hash of every field except the master seed.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.run.seed = 0;
        let text = toml::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The cell's random streams.
    pub fn seeds(&self) -> SeedSet {
        SeedSet::derive(self.run.seed, &self.fingerprint())
    }
}

/// Seeds of the five random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub nature_init: u64,
    pub obs_noise: u64,
    pub ensemble_init: u64,
    pub obs_perturbations: u64,
    pub random_sparsifier: u64,
}

fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl SeedSet {
    /// Nature and observation noise depend on the master seed only, so every
    /// cell of a sweep shares one uncontrolled nature; the filter and
    /// sparsifier streams also depend on the config fingerprint.
    pub fn derive(master: u64, fingerprint: &str) -> Self {
        let m = master.to_le_bytes();
        let fp = fingerprint.as_bytes();
        Self {
            nature_init: hash_seed(&[&m, b"nature-init"]),
            obs_noise: hash_seed(&[&m, b"obs-noise"]),
            ensemble_init: hash_seed(&[&m, fp, b"ensemble-init"]),
            obs_perturbations: hash_seed(&[&m, fp, b"obs-perturbations"]),
            random_sparsifier: hash_seed(&[&m, fp, b"random-sparsifier"]),
        }
    }
}

/// Seeded nature initial state on the attractor.
pub fn make_nature(seed: u64, model: &ModelConfig, transient_steps: usize) -> Result<StateVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![model.forcing; model.k];
    let grid = rng.random_range(0..model.k);
    let z: f64 = rng.sample(StandardNormal);
    x[grid] += 0.01 * (1.0 + z.abs());
    advance(&mut x, transient_steps, model)?;
    StateVector::new(x)
}

/// A sample of nature values, kept sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    sorted: Vec<f64>,
}

impl Distribution {
    pub fn from_values(mut values: Vec<f64>) -> Self {
        values.sort_unstable_by(f64::total_cmp);
        Self { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn percentile(&self, p: f64) -> Result<f64> {
        percentile_sorted(&self.sorted, p)
    }

    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let below = self.sorted.partition_point(|&v| v <= threshold);
        (self.sorted.len() - below) as f64 / self.sorted.len() as f64
    }
}

/// Linear-interpolation percentile (`p` in 0..=100) of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    percentile_sorted(&v, p)
}

pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Invalid(format!("percentile {p} outside [0, 100]")));
    }
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    })
}

/// Free nature run from the seeded initial state; values from the
/// evaluation window only.
pub fn run_uncontrolled(cfg: &ExperimentConfig) -> Result<Distribution> {
    cfg.validate()?;
    uncontrolled_from_seed(cfg, cfg.seeds().nature_init)
}

fn uncontrolled_from_seed(cfg: &ExperimentConfig, nature_seed: u64) -> Result<Distribution> {
    let model = &cfg.model;
    let mut x: Vec<f64> = make_nature(nature_seed, model, cfg.run.nature_transient_steps)?.into();
    let mut ws = Rk4Workspace::new(model.k);
    let mut values = Vec::with_capacity(model.k * cfg.run.eval_steps);
    for step in 1..=cfg.total_steps() {
        rk4_step_in_place(&mut x, model, &mut ws, step)?;
        if step > cfg.run.spin_up_steps {
            values.extend_from_slice(&x);
        }
    }
    Ok(Distribution::from_values(values))
}

/// Per-cycle log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    /// Global step index (1-based; spin-up steps come first).
    pub step: usize,
    /// Nature at the observation time, before any perturbation.
    pub nature: Vec<f64>,
    pub analysis_mean: Vec<f64>,
    pub analysis_rmse: f64,
    pub trigger: Vec<usize>,
    pub delta: Vec<f64>,
    pub delta_max_abs: f64,
    pub delta_l2: f64,
    pub variances: Vec<f64>,
    pub intervention: bool,
}

/// Size of one applied perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterventionStat {
    pub step: usize,
    pub max_abs: f64,
    pub l2: f64,
    pub support: usize,
}

impl InterventionStat {
    pub fn from_delta(step: usize, delta: &[f64]) -> Self {
        Self {
            step,
            max_abs: delta.iter().fold(0.0, |m, v| m.max(v.abs())),
            l2: delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
            support: delta.iter().filter(|&&v| v != 0.0).count(),
        }
    }
}

impl From<&CycleRecord> for InterventionStat {
    fn from(r: &CycleRecord) -> Self {
        Self::from_delta(r.step, &r.delta)
    }
}

/// Quartiles, Tukey whiskers (1.5 IQR) and outlier count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        let q = |p| percentile_sorted(&v, p).unwrap();
        let (q1, median, q3) = (q(25.0), q(50.0), q(75.0));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Some(Self {
            q1,
            median,
            q3,
            whisker_low: inside.first().copied().unwrap_or(q1),
            whisker_high: inside.last().copied().unwrap_or(q3),
            outliers: v.len() - inside.len(),
        })
    }
}

/// Percentile probed for the headline reduction metric.
pub const TAIL_PERCENTILE: f64 = 99.999;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub p_tail_uncontrolled: f64,
    pub p_tail_controlled: f64,
    /// Tail-percentile difference, uncontrolled minus controlled.
    pub reduction: f64,
    pub eval_cycles: usize,
    pub trigger_cycles: usize,
    pub interventions: usize,
    pub intervention_frequency: f64,
    pub mean_max_per_intervention: f64,
    pub mean_l2_per_intervention: f64,
    pub mean_max_per_cycle: f64,
    pub mean_l2_per_cycle: f64,
    pub mean_support_per_intervention: f64,
    pub zero_interventions: bool,
    pub l2_box: BoxStats,
    pub mean_analysis_rmse: f64,
}

/// Metrics from intervention statistics and the two distributions.
/// Averages labelled per-intervention skip cycles with a zero delta.
pub fn metrics(
    interventions: &[InterventionStat],
    eval_cycles: usize,
    controlled: &Distribution,
    uncontrolled: &Distribution,
) -> Result<MetricSummary> {
    let p_u = uncontrolled.percentile(TAIL_PERCENTILE)?;
    let p_c = controlled.percentile(TAIL_PERCENTILE)?;
    let hits: Vec<&InterventionStat> = interventions.iter().filter(|s| s.support > 0).collect();
    let n = hits.len();
    let sum_max: f64 = hits.iter().map(|s| s.max_abs).sum();
    let sum_l2: f64 = hits.iter().map(|s| s.l2).sum();
    let sum_support: usize = hits.iter().map(|s| s.support).sum();
    let per = |sum: f64, count: usize| if count == 0 { 0.0 } else { sum / count as f64 };
    let l2s: Vec<f64> = hits.iter().map(|s| s.l2).collect();
    Ok(MetricSummary {
        p_tail_uncontrolled: p_u,
        p_tail_controlled: p_c,
        reduction: p_u - p_c,
        eval_cycles,
        trigger_cycles: 0,
        interventions: n,
        intervention_frequency: per(n as f64, eval_cycles),
        mean_max_per_intervention: per(sum_max, n),
        mean_l2_per_intervention: per(sum_l2, n),
        mean_max_per_cycle: per(sum_max, eval_cycles),
        mean_l2_per_cycle: per(sum_l2, eval_cycles),
        mean_support_per_intervention: per(sum_support as f64, n),
        zero_interventions: n == 0,
        l2_box: BoxStats::from_values(&l2s).unwrap_or_default(),
        mean_analysis_rmse: 0.0,
    })
}

/// Output of one controlled twin experiment.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub seeds: SeedSet,
    pub controlled: Distribution,
    pub uncontrolled: Arc<Distribution>,
    pub interventions: Vec<InterventionStat>,
    /// Per-cycle log over the configured window (empty when disabled).
    pub records: Vec<CycleRecord>,
    pub log_enabled: bool,
    pub summary: MetricSummary,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn run_cse(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let baseline = Arc::new(uncontrolled_from_seed(cfg, seeds.nature_init)?);
    run_cse_with_baseline(cfg, baseline)
}

/// [`run_cse`] with a precomputed uncontrolled distribution for the same
/// nature seed.
pub fn run_cse_with_baseline(cfg: &ExperimentConfig, uncontrolled: Arc<Distribution>) -> Result<RunResult> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let model = cfg.model;
    let k = model.k;
    let obs_model = cfg.obs.observation_model(k)?;
    let analyzer =
        EnkfAnalyzer::new(k, &obs_model, &cfg.localization)?.with_inflation(cfg.ensemble.inflation);
    let obs_sd: Vec<f64> = obs_model.variances().iter().map(|v| v.sqrt()).collect();

    let mut obs_rng = ChaCha8Rng::seed_from_u64(seeds.obs_noise);
    let mut pert_rng = ChaCha8Rng::seed_from_u64(seeds.obs_perturbations);
    let mut sparse_rng = ChaCha8Rng::seed_from_u64(seeds.random_sparsifier);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.ensemble_init);

    let mut nature: Vec<f64> = make_nature(seeds.nature_init, &model, cfg.run.nature_transient_steps)?.into();
    let mut ensemble =
        Ensemble::perturbed_around(&nature, cfg.ensemble.n, cfg.ensemble.initial_spread, &mut init_rng)?;
    let mut ws = Rk4Workspace::new(k);
    let spin = cfg.run.spin_up_steps;
    let log_range = if cfg.run.log_len > 0 {
        spin + cfg.run.log_start + 1..spin + cfg.run.log_start + cfg.run.log_len + 1
    } else {
        0..0
    };

    let mut values = Vec::with_capacity(k * cfg.run.eval_steps);
    let mut interventions = Vec::new();
    let mut records = Vec::with_capacity(cfg.run.log_len);
    let mut rmse_sum = 0.0;
    let mut trigger_cycles = 0;
    let mut bad_streak = 0;
    let mut obs = vec![0.0; obs_model.len()];

    for step in 1..=cfg.total_steps() {
        // Step 5 of the previous cycle: nature and first guess advance together.
        rk4_step_in_place(&mut nature, &model, &mut ws, step)?;
        forecast_in_place(&mut ensemble, 1, &model)?;

        for ((o, &g), &sd) in obs.iter_mut().zip(obs_model.observed()).zip(&obs_sd) {
            let z: f64 = obs_rng.sample(StandardNormal);
            *o = nature[g - 1] + sd * z;
        }
        ensemble = analyzer.analyze(&ensemble, &obs, &mut pert_rng)?;
        let mean = ensemble.mean();
        let err = rmse(&mean, &nature);
        if err > cfg.run.divergence_rmse {
            bad_streak += 1;
            if bad_streak >= cfg.run.divergence_cycles {
                return Err(Error::FilterDivergence {
                    step,
                    cycles: bad_streak,
                    threshold: cfg.run.divergence_rmse,
                    rmse: err,
                });
            }
        } else {
            bad_streak = 0;
        }
        if step <= spin {
            continue;
        }
        values.extend_from_slice(&nature);
        rmse_sum += err;

        let outcome = estimate_control(&ensemble, &model, &cfg.control, &cfg.sparsifier, &mut sparse_rng)?;
        if !outcome.trigger.is_empty() {
            trigger_cycles += 1;
        }
        let intervened = !outcome.perturbation.is_zero();
        if log_range.contains(&step) {
            records.push(CycleRecord {
                step,
                nature: nature.clone(),
                analysis_mean: mean.to_vec(),
                analysis_rmse: err,
                trigger: outcome.trigger.grids.clone(),
                delta: outcome.perturbation.delta.to_vec(),
                delta_max_abs: outcome.perturbation.max_abs(),
                delta_l2: outcome.perturbation.l2(),
                variances: outcome.variances.clone(),
                intervention: intervened,
            });
        }
        if intervened {
            interventions.push(InterventionStat::from_delta(step, &outcome.perturbation.delta));
            apply_perturbation(&mut nature, &mut ensemble, &outcome.perturbation);
        }
    }

    let controlled = Distribution::from_values(values);
    let mut summary = metrics(&interventions, cfg.run.eval_steps, &controlled, &uncontrolled)?;
    summary.trigger_cycles = trigger_cycles;
    summary.mean_analysis_rmse = rmse_sum / cfg.run.eval_steps as f64;
    Ok(RunResult {
        config: cfg.clone(),
        fingerprint: cfg.fingerprint(),
        seeds,
        controlled,
        uncontrolled,
        interventions,
        records,
        log_enabled: cfg.run.log_len > 0,
        summary,
    })
}

/// Shares uncontrolled baselines between cells with the same nature.
#[derive(Default)]
pub struct BaselineCache {
    slots: Mutex<HashMap<String, Arc<OnceLock<Arc<Distribution>>>>>,
}

impl BaselineCache {
    pub fn get(&self, cfg: &ExperimentConfig) -> Result<Arc<Distribution>> {
        let seed = cfg.seeds().nature_init;
        let key = format!(
            "{seed}/{:?}/{}/{}/{}",
            cfg.model, cfg.run.spin_up_steps, cfg.run.eval_steps, cfg.run.nature_transient_steps
        );
        let slot = self.slots.lock().unwrap().entry(key).or_default().clone();
        if let Some(d) = slot.get() {
            return Ok(d.clone());
        }
        let d = Arc::new(uncontrolled_from_seed(cfg, seed)?);
        Ok(slot.get_or_init(|| d).clone())
    }
}

/// Outcome of one sweep cell.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub config: ExperimentConfig,
    pub fingerprint: String,
    pub result: std::result::Result<MetricSummary, String>,
    /// True when the cell was found in the store and not re-run.
    pub resumed: bool,
}

/// Hooks that let a result store skip finished cells and persist new ones.
pub trait CellSink: Sync {
    fn existing(&self, cfg: &ExperimentConfig) -> Option<MetricSummary>;
    fn record(&self, outcome: &CellOutcome, run: Option<&RunResult>) -> Result<()>;
}

/// Runs every cell on a pool of `workers` threads. Cells are independent,
/// so results do not depend on the worker count. A failing cell is
/// reported in its outcome and does not stop the others.
pub fn sweep(cells: &[ExperimentConfig], workers: usize, sink: Option<&dyn CellSink>) -> Result<Vec<CellOutcome>> {
    for c in cells {
        c.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("worker pool: {e}")))?;
    let cache = BaselineCache::default();
    let run_cell = |cfg: &ExperimentConfig| -> Result<CellOutcome> {
        let fingerprint = cfg.fingerprint();
        if let Some(done) = sink.and_then(|s| s.existing(cfg)) {
            return Ok(CellOutcome {
                config: cfg.clone(),
                fingerprint,
                result: Ok(done),
                resumed: true,
            });
        }
        let run = cache.get(cfg).and_then(|b| run_cse_with_baseline(cfg, b));
        let outcome = CellOutcome {
            config: cfg.clone(),
            fingerprint,
            result: run.as_ref().map(|r| r.summary).map_err(|e| e.to_string()),
            resumed: false,
        };
        if let Some(s) = sink {
            s.record(&outcome, run.as_ref().ok())?;
        }
        Ok(outcome)
    };
    pool.install(|| cells.par_iter().map(run_cell).collect())
}

/// Axes of a sweep; [`SweepGrid::cells`] takes their product.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub ensemble_sizes: Vec<usize>,
    pub weight_sds: Vec<f64>,
    pub sparsifiers: Vec<Sparsifier>,
    pub aoei: Vec<bool>,
}

impl SweepGrid {
    pub fn cells(&self, base: &ExperimentConfig) -> Vec<ExperimentConfig> {
        let mut out = Vec::new();
        for &n in &self.ensemble_sizes {
            for &aoei in &self.aoei {
                for &sp in &self.sparsifiers {
                    for &sd in &self.weight_sds {
                        let mut c = base.clone();
                        c.ensemble.n = n;
                        c.control.weight_sd = sd;
                        c.control.aoei = aoei;
                        c.sparsifier = sp;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

pub const GRID_ENSEMBLE_SIZES: [usize; 3] = [40, 20, 10];
pub const GRID_WEIGHT_SDS: [f64; 5] = [0.0001, 0.001, 0.01, 0.1, 1.0];
pub const GRID_LC: [f64; 4] = [1.0, 2.0, 5.0, 10.0];
pub const GRID_LAMBDA: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const GRID_N_L: [usize; 4] = [1, 3, 9, 19];

/// The published experiment grid: localization and thresholding with and
/// without adaptive inflation, unsparsified runs with and without it, and
/// the random-selection baseline without it.
pub fn full_grid(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let sizes = GRID_ENSEMBLE_SIZES.to_vec();
    let sds = GRID_WEIGHT_SDS.to_vec();
    let mut sparse: Vec<Sparsifier> = GRID_LC.iter().map(|&lc| Sparsifier::ControlLocalization { lc }).collect();
    sparse.extend(GRID_LAMBDA.iter().map(|&l| Sparsifier::Thresholding { lambda_frac: l }));
    sparse.push(Sparsifier::None);
    let mut cells = SweepGrid {
        ensemble_sizes: sizes.clone(),
        weight_sds: sds.clone(),
        sparsifiers: sparse,
        aoei: vec![false, true],
    }
    .cells(base);
    cells.extend(
        SweepGrid {
            ensemble_sizes: sizes,
            weight_sds: sds,
            sparsifiers: GRID_N_L.iter().map(|&n_l| Sparsifier::RandomSelection { n_l }).collect(),
            aoei: vec![false],
        }
        .cells(base),
    );
    cells
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(mut c: ExperimentConfig) -> ExperimentConfig {
        c.run.spin_up_steps = 200;
        c.run.eval_steps = 300;
        c.run.nature_transient_steps = 500;
        c
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 100.0).unwrap(), 3.0);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptyDistribution)));
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn tail_percentile_position_for_full_run() {
        // 40 x 146000 samples: the 99.999th percentile sits ~58 values from the top
        let n = 40 * 146_000_usize;
        let pos = TAIL_PERCENTILE / 100.0 * (n - 1) as f64;
        let from_top = (n - 1) as f64 - pos;
        assert!((from_top - 58.4).abs() < 0.1, "{from_top}");
    }

    #[test]
    fn metrics_on_synthetic_records() {
        let stats = [
            InterventionStat::from_delta(1, &[1.0, 0.0, 0.0]),
            InterventionStat::from_delta(2, &[0.0, -2.0, 0.0]),
        ];
        let d = Distribution::from_values(vec![1.0, 2.0, 3.0]);
        let m = metrics(&stats, 10, &d, &d).unwrap();
        assert_eq!(m.mean_max_per_intervention, 1.5);
        assert_eq!(m.mean_l2_per_intervention, 1.5);
        assert_eq!(m.intervention_frequency, 0.2);
        assert_eq!(m.mean_l2_per_cycle, 0.3);
        assert_eq!(m.reduction, 0.0);
        assert!(!m.zero_interventions);

        let none = metrics(&[], 10, &d, &d).unwrap();
        assert!(none.zero_interventions);
        assert_eq!(none.intervention_frequency, 0.0);
        assert_eq!(none.mean_l2_per_intervention, 0.0);
    }

    #[test]
    fn box_stats_flags_outliers() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let b = BoxStats::from_values(&v).unwrap();
        assert_eq!(b.median, 5.5);
        assert_eq!(b.outliers, 1);
        assert_eq!(b.whisker_high, 9.0);
        assert_eq!(b.whisker_low, 1.0);
    }

    #[test]
    fn make_nature_is_seeded() {
        let m = ModelConfig::default();
        let a = make_nature(5, &m, 2000).unwrap();
        assert_eq!(a, make_nature(5, &m, 2000).unwrap());
        let b = make_nature(6, &m, 2000).unwrap();
        assert!(rmse(&a, &b) > 1.0);
        assert!(a.iter().all(|v| v.abs() < 25.0));
    }

    #[test]
    fn sample_counts_are_conserved() {
        let c = short(ExperimentConfig::default());
        let r = run_cse(&c).unwrap();
        assert_eq!(r.controlled.len(), 40 * 300);
        assert_eq!(r.uncontrolled.len(), 40 * 300);
    }

    #[test]
    fn disabled_control_reproduces_baseline() {
        let mut c = short(ExperimentConfig::default());
        c.control.trigger_threshold = f64::INFINITY;
        let r = run_cse(&c).unwrap();
        assert_eq!(r.summary.interventions, 0);
        assert_eq!(&r.controlled, r.uncontrolled.as_ref());
        assert_eq!(r.controlled, run_uncontrolled(&c).unwrap());
    }

    #[test]
    fn logging_window_is_respected() {
        let mut c = short(ExperimentConfig::default());
        c.run.log_start = 10;
        c.run.log_len = 25;
        let r = run_cse(&c).unwrap();
        assert_eq!(r.records.len(), 25);
        assert_eq!(r.records[0].step, c.run.spin_up_steps + 11);
        for rec in &r.records {
            assert_eq!(rec.intervention, rec.delta.iter().any(|&d| d != 0.0));
        }
    }

    #[test]
    fn fingerprint_ignores_seed_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.run.seed = 99;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.control.weight_sd = 1.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
        let sa = a.seeds();
        let sb = b.seeds();
        assert_ne!(sa.nature_init, sb.nature_init);
    }

    #[test]
    fn full_grid_cell_count() {
        // 3 sizes x 5 weights x (4 Lc + 4 Lambda + unsparsified) x 2 AOEI
        // + 3 sizes x 5 weights x 4 n_L
        let cells = full_grid(&ExperimentConfig::default());
        assert_eq!(cells.len(), 3 * 5 * 9 * 2 + 3 * 5 * 4);
        assert_eq!(cells.len(), 330);
        let mut fps: Vec<String> = cells.iter().map(|c| c.fingerprint()).collect();
        fps.sort();
        fps.dedup();
        assert_eq!(fps.len(), 330);
    }
}
