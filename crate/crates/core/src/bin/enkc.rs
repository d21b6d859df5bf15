use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use enkc::config::{emit_config, parse_config_with_sweep, SweepSpec};
use enkc::harness::{run_cse, run_uncontrolled, sweep, ExperimentConfig, TAIL_PERCENTILE};
use enkc::output::{default_percentile_grid, write_file, write_run, Dumps, ResultStore};
use enkc::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "enkc", version, about = "Ensemble Kalman control twin experiments on Lorenz 96")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one controlled experiment.
    Run(Common),
    /// Free nature run only: climatology of the uncontrolled system.
    Baseline(Common),
    /// Run every cell of the `[sweep]` grid into a resumable result store.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Use a named grid instead of the config's `[sweep]` table.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Aggregate an existing result store.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Comma list of percentiles, hovmoller, cycles, boxstats.
    #[arg(long, default_value = "")]
    dump: String,
    /// Override a config value, e.g. `--set control.weight_sd=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
    Partial(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_runtime() {
            Failure::Runtime(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, Option<SweepSpec>), Failure> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    let (cfg, sweep) = parse_config_with_sweep(&text, &overrides).map_err(|e| {
        let origin = common.config.as_deref().unwrap_or(Path::new("<defaults>"));
        Failure::Config(format!("{}: {e}", origin.display()))
    })?;
    Ok((cfg, sweep))
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let (cfg, _) = load(common)?;
    let dumps = Dumps::parse(&common.dump)?;
    if dumps.needs_log() && cfg.run.log_len == 0 {
        return Err(Failure::Config(format!(
            "{} (set run.log_len to dump hovmoller or cycles)",
            Error::LoggingDisabled
        )));
    }
    let t = Instant::now();
    let run = run_cse(&cfg)?;
    write_run(&run, &common.out, dumps)?;
    let m = &run.summary;
    eprintln!(
        "run {} done in {:.1?}: reduction {:.4}, {} interventions, mean L2 {:.4}, analysis RMSE {:.4}",
        run.fingerprint,
        t.elapsed(),
        m.reduction,
        m.interventions,
        m.mean_l2_per_intervention,
        m.mean_analysis_rmse
    );
    Ok(())
}

fn cmd_baseline(common: &Common) -> Result<(), Failure> {
    let (cfg, _) = load(common)?;
    let dist = run_uncontrolled(&cfg)?;
    let threshold = cfg.control.trigger_threshold;
    write_file(&common.out.join("config.toml"), &emit_config(&cfg))?;
    let mut text = String::from("p,value\n");
    for p in default_percentile_grid() {
        text.push_str(&format!("{p},{}\n", dist.percentile(p)?));
    }
    write_file(&common.out.join("baseline_percentiles.csv"), &text)?;
    let summary = format!(
        "samples,threshold,fraction_above_threshold,p_tail\n{},{},{},{}\n",
        dist.len(),
        threshold,
        dist.fraction_above(threshold),
        dist.percentile(TAIL_PERCENTILE)?
    );
    write_file(&common.out.join("baseline.csv"), &summary)?;
    eprint!("{summary}");
    Ok(())
}

fn cmd_sweep(common: &Common, preset: Option<&str>) -> Result<(), Failure> {
    let (base, spec) = load(common)?;
    let spec = match preset {
        Some(p) => SweepSpec {
            preset: Some(p.to_string()),
            ..spec.unwrap_or_default()
        },
        None => spec.ok_or_else(|| Failure::Config("config has no [sweep] table and no --preset".into()))?,
    };
    let cells = spec.cells(&base)?;
    eprintln!("sweep: {} cells, {} workers", cells.len(), common.workers.max(1));
    let store = ResultStore::open(&common.out)?;
    write_file(&common.out.join("sweep_base.toml"), &emit_config(&base))?;
    let t = Instant::now();
    let outcomes = sweep(&cells, common.workers, Some(&store))?;
    let resumed = outcomes.iter().filter(|o| o.resumed).count();
    let failed: Vec<_> = outcomes.iter().filter(|o| o.result.is_err()).collect();
    let summary = store.write_report(&common.out)?;
    eprintln!("sweep finished in {:.1?} ({resumed} cells resumed)", t.elapsed());
    eprint!("{summary}");
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!("{} of {} cells failed", failed.len(), outcomes.len())))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Baseline(c) => cmd_baseline(c),
        Command::Sweep { common, preset } => cmd_sweep(common, preset.as_deref()),
        Command::Report { out } => ResultStore::open(out)
            .and_then(|s| s.write_report(out))
            .map(|summary| print!("{summary}"))
            .map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Partial(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_PARTIAL)
        }
    }
}
