//! CSV emitters and the per-cell result store.
//!
//! Every float is written with Rust's shortest round-trip formatting, so a
//! value read back with `str::parse::<f64>` is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::emit_config;
use crate::control::TriggerRule;
use crate::error::{Error, Result};
use crate::harness::{
    BoxStats, CellOutcome, CellSink, CycleRecord, Distribution, ExperimentConfig, MetricSummary, RunResult,
    TAIL_PERCENTILE,
};

/// `0, 1, ..., 100` followed by the dense tail `99.900, 99.901, ..., 100.000`.
pub fn default_percentile_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=100).map(f64::from).collect();
    grid.extend((99_900..=100_000).map(|i| f64::from(i) / 1000.0));
    grid
}

/// Columns `p,uncontrolled,controlled`.
pub fn emit_percentiles(uncontrolled: &Distribution, controlled: &Distribution, grid: &[f64]) -> Result<String> {
    let mut out = String::from("p,uncontrolled,controlled\n");
    for &p in grid {
        let u = uncontrolled.percentile(p)?;
        let c = controlled.percentile(p)?;
        writeln!(out, "{p},{u},{c}").unwrap();
    }
    Ok(out)
}

/// Three (cycle x grid) rasters over the logged window.
#[derive(Clone, Debug, PartialEq)]
pub struct Hovmoller {
    /// Nature values.
    pub nature: String,
    /// Nature values above the threshold; other cells empty.
    pub extreme: String,
    /// Applied perturbations.
    pub delta: String,
}

fn raster_header(k: usize) -> String {
    let mut h = String::from("step");
    for g in 1..=k {
        write!(h, ",k{g}").unwrap();
    }
    h.push('\n');
    h
}

/// Rasters for the records whose step falls in `window` (all of them when
/// `None`).
pub fn emit_hovmoller(run: &RunResult, window: Option<std::ops::Range<usize>>) -> Result<Hovmoller> {
    if !run.log_enabled {
        return Err(Error::LoggingDisabled);
    }
    hovmoller_from_records(&run.records, run.config.control.trigger_threshold, window)
}

pub fn hovmoller_from_records(
    records: &[CycleRecord],
    threshold: f64,
    window: Option<std::ops::Range<usize>>,
) -> Result<Hovmoller> {
    let k = records.first().map_or(0, |r| r.nature.len());
    let header = raster_header(k);
    let (mut nature, mut extreme, mut delta) = (header.clone(), header.clone(), header);
    for r in records.iter().filter(|r| window.as_ref().is_none_or(|w| w.contains(&r.step))) {
        write!(nature, "{}", r.step).unwrap();
        write!(extreme, "{}", r.step).unwrap();
        write!(delta, "{}", r.step).unwrap();
        for (&x, &d) in r.nature.iter().zip(&r.delta) {
            write!(nature, ",{x}").unwrap();
            if x > threshold {
                write!(extreme, ",{x}").unwrap();
            } else {
                extreme.push(',');
            }
            write!(delta, ",{d}").unwrap();
        }
        nature.push('\n');
        extreme.push('\n');
        delta.push('\n');
    }
    Ok(Hovmoller { nature, extreme, delta })
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

/// Per-cycle log; list-valued columns are space-separated.
pub fn emit_cycles(run: &RunResult) -> Result<String> {
    if !run.log_enabled {
        return Err(Error::LoggingDisabled);
    }
    let mut out = String::from(
        "step,analysis_rmse,intervention,n_trigger,trigger_grids,delta_max_abs,delta_l2,delta_support,variances\n",
    );
    for r in &run.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            r.analysis_rmse,
            r.intervention,
            r.trigger.len(),
            join(&r.trigger),
            r.delta_max_abs,
            r.delta_l2,
            r.delta.iter().filter(|&&d| d != 0.0).count(),
            join(&r.variances),
        )
        .unwrap();
    }
    Ok(out)
}

/// Box-plot statistics of the per-intervention L2 norms.
pub fn emit_boxstats(summary: &MetricSummary) -> String {
    let b = summary.l2_box;
    format!(
        "n,q1,median,q3,whisker_low,whisker_high,outliers\n{},{},{},{},{},{},{}\n",
        summary.interventions, b.q1, b.median, b.q3, b.whisker_low, b.whisker_high, b.outliers
    )
}

const CONFIG_COLUMNS: &[&str] = &[
    "master_seed",
    "fingerprint",
    "k",
    "forcing",
    "dt",
    "obs_every",
    "obs_variance",
    "loc_enabled",
    "loc_scale",
    "n",
    "initial_spread",
    "inflation",
    "horizon_steps",
    "trigger_threshold",
    "reference_value",
    "weight_sd",
    "aoei",
    "trigger_rule",
    "localize_innovation",
    "method",
    "scale",
    "spin_up_steps",
    "eval_steps",
];

const METRIC_COLUMNS: &[&str] = &[
    "p_tail_uncontrolled",
    "p_tail_controlled",
    "reduction",
    "eval_cycles",
    "trigger_cycles",
    "interventions",
    "intervention_frequency",
    "mean_max_per_intervention",
    "mean_l2_per_intervention",
    "mean_max_per_cycle",
    "mean_l2_per_cycle",
    "mean_support_per_intervention",
    "zero_interventions",
    "l2_q1",
    "l2_median",
    "l2_q3",
    "l2_whisker_low",
    "l2_whisker_high",
    "l2_outliers",
    "mean_analysis_rmse",
];

/// Header of cell and report files.
pub fn row_header() -> Vec<&'static str> {
    let mut h = CONFIG_COLUMNS.to_vec();
    h.push("status");
    h.push("error");
    h.extend_from_slice(METRIC_COLUMNS);
    h
}

fn config_fields(cfg: &ExperimentConfig, fingerprint: &str) -> Vec<String> {
    let (method, scale) = cfg.sparsifier.label();
    let rule = match cfg.control.trigger_rule {
        TriggerRule::AtLeastOne => "at_least_one",
        TriggerRule::AtLeastTwo => "at_least_two",
    };
    vec![
        cfg.run.seed.to_string(),
        fingerprint.to_string(),
        cfg.model.k.to_string(),
        cfg.model.forcing.to_string(),
        cfg.model.dt.to_string(),
        cfg.obs.every.to_string(),
        cfg.obs.variance.to_string(),
        cfg.localization.enabled.to_string(),
        cfg.localization.scale.to_string(),
        cfg.ensemble.n.to_string(),
        cfg.ensemble.initial_spread.to_string(),
        cfg.ensemble.inflation.to_string(),
        cfg.control.horizon_steps.to_string(),
        cfg.control.trigger_threshold.to_string(),
        cfg.control.reference_value.to_string(),
        cfg.control.weight_sd.to_string(),
        cfg.control.aoei.to_string(),
        rule.to_string(),
        cfg.control.localize_innovation.to_string(),
        method.to_string(),
        scale,
        cfg.run.spin_up_steps.to_string(),
        cfg.run.eval_steps.to_string(),
    ]
}

fn metric_fields(m: &MetricSummary) -> Vec<String> {
    let b = &m.l2_box;
    vec![
        m.p_tail_uncontrolled.to_string(),
        m.p_tail_controlled.to_string(),
        m.reduction.to_string(),
        m.eval_cycles.to_string(),
        m.trigger_cycles.to_string(),
        m.interventions.to_string(),
        m.intervention_frequency.to_string(),
        m.mean_max_per_intervention.to_string(),
        m.mean_l2_per_intervention.to_string(),
        m.mean_max_per_cycle.to_string(),
        m.mean_l2_per_cycle.to_string(),
        m.mean_support_per_intervention.to_string(),
        m.zero_interventions.to_string(),
        b.q1.to_string(),
        b.median.to_string(),
        b.q3.to_string(),
        b.whisker_low.to_string(),
        b.whisker_high.to_string(),
        b.outliers.to_string(),
        m.mean_analysis_rmse.to_string(),
    ]
}

/// One result row: config columns, status, error, metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRow {
    pub fields: Vec<String>,
}

impl CellRow {
    pub fn from_outcome(o: &CellOutcome) -> Self {
        let mut fields = config_fields(&o.config, &o.fingerprint);
        match &o.result {
            Ok(m) => {
                fields.push("ok".into());
                fields.push(String::new());
                fields.extend(metric_fields(m));
            }
            Err(e) => {
                fields.push("failed".into());
                fields.push(e.replace(['\n', ','], " "));
                fields.extend(std::iter::repeat_n(String::new(), METRIC_COLUMNS.len()));
            }
        }
        Self { fields }
    }

    fn get(&self, column: &str) -> &str {
        let i = row_header().iter().position(|c| *c == column).expect("known column");
        &self.fields[i]
    }

    pub fn is_ok(&self) -> bool {
        self.get("status") == "ok"
    }

    pub fn value(&self, column: &str) -> Option<f64> {
        self.get(column).parse().ok()
    }

    pub fn text(&self, column: &str) -> &str {
        self.get(column)
    }

    /// Metrics parsed back from an `ok` row.
    pub fn metrics(&self) -> Option<MetricSummary> {
        if !self.is_ok() {
            return None;
        }
        let f = |c| self.value(c);
        let u = |c| self.get(c).parse::<usize>().ok();
        Some(MetricSummary {
            p_tail_uncontrolled: f("p_tail_uncontrolled")?,
            p_tail_controlled: f("p_tail_controlled")?,
            reduction: f("reduction")?,
            eval_cycles: u("eval_cycles")?,
            trigger_cycles: u("trigger_cycles")?,
            interventions: u("interventions")?,
            intervention_frequency: f("intervention_frequency")?,
            mean_max_per_intervention: f("mean_max_per_intervention")?,
            mean_l2_per_intervention: f("mean_l2_per_intervention")?,
            mean_max_per_cycle: f("mean_max_per_cycle")?,
            mean_l2_per_cycle: f("mean_l2_per_cycle")?,
            mean_support_per_intervention: f("mean_support_per_intervention")?,
            zero_interventions: self.get("zero_interventions").parse().ok()?,
            l2_box: BoxStats {
                q1: f("l2_q1")?,
                median: f("l2_median")?,
                q3: f("l2_q3")?,
                whisker_low: f("l2_whisker_low")?,
                whisker_high: f("l2_whisker_high")?,
                outliers: u("l2_outliers")?,
            },
            mean_analysis_rmse: f("mean_analysis_rmse")?,
        })
    }
}

fn write_rows(rows: &[CellRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(row_header()).unwrap();
    for r in rows {
        w.write_record(&r.fields).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

fn read_rows(text: &str, path: &Path) -> Result<Vec<CellRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| store_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != row_header() {
        return Err(Error::Store {
            path: path.to_path_buf(),
            message: "unexpected header".into(),
        });
    }
    r.records()
        .map(|rec| {
            rec.map(|rec| CellRow {
                fields: rec.iter().map(String::from).collect(),
            })
            .map_err(|e| store_err(path, e))
        })
        .collect()
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Store {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Metrics table for a single run.
pub fn emit_metrics(run: &RunResult) -> String {
    let outcome = CellOutcome {
        config: run.config.clone(),
        fingerprint: run.fingerprint.clone(),
        result: Ok(run.summary),
        resumed: false,
    };
    write_rows(&[CellRow::from_outcome(&outcome)])
}

/// Aggregated table plus a short human-readable summary.
pub fn emit_report(rows: &[CellRow]) -> (String, String) {
    let table = write_rows(rows);
    let ok: Vec<&CellRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let failed = rows.len() - ok.len();
    let describe = |r: &CellRow| {
        let (method, scale) = (r.text("method"), r.text("scale"));
        format!(
            "{} (seed {}, N={}, weight_sd={}, {}{}{}, aoei={})",
            r.text("fingerprint"),
            r.text("master_seed"),
            r.text("n"),
            r.text("weight_sd"),
            method,
            if scale.is_empty() { "" } else { " " },
            scale,
            r.text("aoei"),
        )
    };
    let mut summary = format!("cells: {} ({} ok, {} failed)\n", rows.len(), ok.len(), failed);
    let best_reduction = ok
        .iter()
        .max_by(|a, b| a.value("reduction").unwrap().total_cmp(&b.value("reduction").unwrap()));
    if let Some(r) = best_reduction {
        writeln!(
            summary,
            "best {TAIL_PERCENTILE} percentile reduction: {} -> {}",
            r.text("reduction"),
            describe(r)
        )
        .unwrap();
    }
    let efficiency = |r: &CellRow| {
        let l2 = r.value("mean_l2_per_intervention").unwrap();
        if l2 > 0.0 {
            r.value("reduction").unwrap() / l2
        } else {
            f64::NEG_INFINITY
        }
    };
    let best_efficiency = ok
        .iter()
        .filter(|r| r.value("interventions").unwrap_or(0.0) > 0.0)
        .max_by(|a, b| efficiency(a).total_cmp(&efficiency(b)));
    if let Some(r) = best_efficiency {
        writeln!(
            summary,
            "best efficiency (reduction / mean L2 per intervention): {} -> {}",
            efficiency(r),
            describe(r)
        )
        .unwrap();
    }
    for r in rows.iter().filter(|r| !r.is_ok()) {
        writeln!(summary, "FAILED {}: {}", describe(r), r.text("error")).unwrap();
    }
    (table, summary)
}

/// Directory of per-cell results: `cells/<fingerprint>-s<seed>.csv` plus the
/// effective config next to it.
pub struct ResultStore {
    root: PathBuf,
}

impl ResultStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let cells = root.join("cells");
        fs::create_dir_all(&cells).map_err(|e| Error::io(&cells, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(cfg: &ExperimentConfig) -> String {
        format!("{}-s{}", cfg.fingerprint(), cfg.run.seed)
    }

    pub fn cell_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.root.join("cells").join(format!("{}.csv", Self::stem(cfg)))
    }

    pub fn read_cell(&self, cfg: &ExperimentConfig) -> Option<CellRow> {
        let path = self.cell_path(cfg);
        let text = fs::read_to_string(&path).ok()?;
        read_rows(&text, &path).ok()?.into_iter().next()
    }

    /// All cell rows, ordered by file name.
    pub fn rows(&self) -> Result<Vec<CellRow>> {
        let dir = self.root.join("cells");
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut rows = Vec::with_capacity(paths.len());
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            rows.extend(read_rows(&text, &p)?);
        }
        Ok(rows)
    }

    pub fn write_report(&self, out_dir: &Path) -> Result<String> {
        let rows = self.rows()?;
        let (table, summary) = emit_report(&rows);
        write_file(&out_dir.join("report.csv"), &table)?;
        write_file(&out_dir.join("summary.txt"), &summary)?;
        Ok(summary)
    }
}

impl CellSink for ResultStore {
    fn existing(&self, cfg: &ExperimentConfig) -> Option<MetricSummary> {
        self.read_cell(cfg)?.metrics()
    }

    fn record(&self, outcome: &CellOutcome, _run: Option<&RunResult>) -> Result<()> {
        let stem = Self::stem(&outcome.config);
        let dir = self.root.join("cells");
        write_file(&dir.join(format!("{stem}.toml")), &emit_config(&outcome.config))?;
        write_file(&dir.join(format!("{stem}.csv")), &write_rows(&[CellRow::from_outcome(outcome)]))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Dump selectors for single runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Dumps {
    pub percentiles: bool,
    pub hovmoller: bool,
    pub cycles: bool,
    pub boxstats: bool,
}

impl Dumps {
    pub fn parse(list: &str) -> Result<Self> {
        let mut d = Self::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "percentiles" => d.percentiles = true,
                "hovmoller" => d.hovmoller = true,
                "cycles" => d.cycles = true,
                "boxstats" => d.boxstats = true,
                other => return Err(Error::Invalid(format!("unknown dump selector {other:?}"))),
            }
        }
        Ok(d)
    }

    pub fn needs_log(&self) -> bool {
        self.hovmoller || self.cycles
    }
}

/// Writes the effective config, the metrics row and the selected dumps.
pub fn write_run(run: &RunResult, out_dir: &Path, dumps: Dumps) -> Result<()> {
    write_file(&out_dir.join("config.toml"), &emit_config(&run.config))?;
    write_file(&out_dir.join("metrics.csv"), &emit_metrics(run))?;
    if dumps.percentiles {
        let text = emit_percentiles(&run.uncontrolled, &run.controlled, &default_percentile_grid())?;
        write_file(&out_dir.join("percentiles.csv"), &text)?;
    }
    if dumps.boxstats {
        write_file(&out_dir.join("boxstats.csv"), &emit_boxstats(&run.summary))?;
    }
    if dumps.cycles {
        write_file(&out_dir.join("cycles.csv"), &emit_cycles(run)?)?;
    }
    if dumps.hovmoller {
        let h = emit_hovmoller(run, None)?;
        write_file(&out_dir.join("hovmoller_nature.csv"), &h.nature)?;
        write_file(&out_dir.join("hovmoller_extreme.csv"), &h.extreme)?;
        write_file(&out_dir.join("hovmoller_delta.csv"), &h.delta)?;
    }
    Ok(())
}
