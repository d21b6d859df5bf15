//! Experiment config files: TOML sections `model`, `obs`, `localization`,
//! `ensemble`, `control`, `sparsifier`, `run`, and an optional `sweep`.
//!
//! Unknown keys are errors. Missing keys take the documented defaults
//! (see [`ExperimentConfig::default`]).

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::control::Sparsifier;
use crate::error::{Error, Result};
use crate::harness::{full_grid, ExperimentConfig, SweepGrid};

/// Sweep axes from a config file's `[sweep]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// `"full"` for the complete method comparison grid; axes below are then ignored.
    pub preset: Option<String>,
    pub ensemble_sizes: Vec<usize>,
    pub weight_sds: Vec<f64>,
    pub sparsifiers: Vec<Sparsifier>,
    pub aoei: Vec<bool>,
    /// Master seeds; every cell is repeated once per seed. Empty means the
    /// base config's seed.
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        let cells = match self.preset.as_deref() {
            Some("full") => full_grid(base),
            Some(other) => return Err(Error::Invalid(format!("sweep.preset: unknown preset {other:?}"))),
            None => SweepGrid {
                ensemble_sizes: or(&self.ensemble_sizes, base.ensemble.n),
                weight_sds: or(&self.weight_sds, base.control.weight_sd),
                sparsifiers: or(&self.sparsifiers, base.sparsifier),
                aoei: or(&self.aoei, base.control.aoei),
            }
            .cells(base),
        };
        if self.seeds.is_empty() {
            return Ok(cells);
        }
        let mut out = Vec::with_capacity(cells.len() * self.seeds.len());
        for &seed in &self.seeds {
            for c in &cells {
                let mut c = c.clone();
                c.run.seed = seed;
                out.push(c);
            }
        }
        Ok(out)
    }
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line where `section.key` is assigned, if it is in the text.
fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.split_once('.')?;
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim();
            let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
            if full.eq_ignore_ascii_case(dotted) || (current == section && k.eq_ignore_ascii_case(key)) {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Re-labels an invariant violation with the line of the key it names.
fn attach_line(text: &str, err: Error) -> Error {
    match err {
        Error::Invalid(msg) => {
            let key = msg.split_whitespace().next().unwrap_or("");
            match locate_key(text, key) {
                Some(line) => Error::Config { line, message: msg },
                None => Error::Invalid(msg),
            }
        }
        other => other,
    }
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>().map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        message: e.message().to_string(),
    })
}

fn from_table<T: serde::de::DeserializeOwned>(text: &str, table: Table) -> Result<T> {
    // Round-trip through text so deserialization errors carry spans.
    let normalized = toml::to_string(&table).map_err(|e| Error::Invalid(e.to_string()))?;
    toml::from_str::<T>(&normalized).map_err(|e| {
        let message = e.message().to_string();
        // map back to the user's text through the offending key
        let line = e
            .span()
            .and_then(|s| locate_error_key(text, &normalized, s.start))
            .unwrap_or(0);
        Error::Config { line, message }
    })
}

/// Finds the dotted key at `offset` of `normalized` and its line in `text`.
fn locate_error_key(text: &str, normalized: &str, offset: usize) -> Option<usize> {
    let mut section = String::new();
    let mut key = None;
    for line in normalized[..offset.min(normalized.len())].lines().chain(
        normalized[offset.min(normalized.len())..].lines().take(1),
    ) {
        let l = line.trim();
        if let Some(name) = l.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
            section = name.to_string();
            key = None;
        } else if let Some((k, _)) = l.split_once('=') {
            key = Some(k.trim().to_string());
        }
    }
    let dotted = match key {
        Some(k) if section.is_empty() => k,
        Some(k) => format!("{section}.{k}"),
        None => section,
    };
    locate_key(text, &dotted).or_else(|| {
        text.lines()
            .position(|l| l.trim().trim_start_matches('[').trim_end_matches(']') == dotted)
            .map(|i| i + 1)
    })
}

/// Parses and validates a config; the `[sweep]` table, if any, is returned
/// separately.
pub fn parse_config_with_sweep(text: &str, overrides: &[String]) -> Result<(ExperimentConfig, Option<SweepSpec>)> {
    let mut table = parse_table(text)?;
    let sweep = match table.remove("sweep") {
        Some(Value::Table(t)) => Some(from_table::<SweepSpec>(text, t)?),
        Some(_) => {
            return Err(Error::Config {
                line: locate_key(text, "sweep").unwrap_or(0),
                message: "sweep must be a table".into(),
            })
        }
        None => None,
    };
    apply_overrides(&mut table, overrides)?;
    let cfg: ExperimentConfig = from_table(text, table)?;
    cfg.validate().map_err(|e| attach_line(text, e))?;
    Ok((cfg, sweep))
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_sweep(text, &[]).map(|(c, _)| c)
}

/// The config as TOML; `parse_config(&emit_config(c)) == c`.
pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

fn parse_scalar(raw: &str) -> Value {
    let raw = raw.trim();
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` overrides. `sparsifier=<kind>` is shorthand
/// for `sparsifier.kind=<kind>`; changing the kind drops the previous
/// kind's parameters unless they are also overridden.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    let mut parsed = Vec::with_capacity(overrides.len());
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| Error::Invalid(format!("override {o:?} is not key=value")))?;
        let key = key.trim().to_ascii_lowercase();
        let key = if key == "sparsifier" { "sparsifier.kind".to_string() } else { key };
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| Error::Invalid(format!("override key {key:?} must be section.key")))?;
        parsed.push((section.to_string(), field.to_string(), parse_scalar(value)));
    }
    // the sparsifier is a tagged enum, so a partial table cannot fall back
    // to defaults field by field; start from the default one
    if parsed.iter().any(|(s, _, _)| s == "sparsifier") && !table.contains_key("sparsifier") {
        let default = Table::try_from(ExperimentConfig::default().sparsifier).map_err(|e| Error::Invalid(e.to_string()))?;
        table.insert("sparsifier".into(), Value::Table(default));
    }
    let kind_changed = parsed.iter().any(|(s, f, v)| {
        s == "sparsifier"
            && f == "kind"
            && table
                .get("sparsifier")
                .and_then(|t| t.get("kind"))
                .map_or(true, |old| old != v)
    });
    if kind_changed {
        if let Some(Value::Table(t)) = table.get_mut("sparsifier") {
            t.retain(|k, _| parsed.iter().any(|(s, f, _)| s == "sparsifier" && f == k));
        }
    }
    for (section, field, value) in parsed {
        let entry = table.entry(section.clone()).or_insert_with(|| Value::Table(Table::new()));
        match entry {
            Value::Table(t) => {
                t.insert(field, value);
            }
            _ => return Err(Error::Invalid(format!("override target {section} is not a table"))),
        }
    }
    Ok(())
}


fn or<T: Clone>(axis: &[T], default: T) -> Vec<T> {
    if axis.is_empty() {
        vec![default]
    } else {
        axis.to_vec()
    }
}
