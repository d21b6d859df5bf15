//! Logs a window of cycles and writes the time x grid rasters of nature,
//! extremes (> 12) and applied perturbations as CSV.
//!
//!     cargo run --release --example hovmoller [out_dir]

use std::path::PathBuf;

use enkc::harness::{run_cse, ExperimentConfig};
use enkc::output::{write_run, Dumps};

fn main() -> enkc::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "hovmoller_out".into()).into();
    let mut cfg = ExperimentConfig::default();
    cfg.run.eval_steps = 4_000;
    cfg.run.log_start = 1_000;
    cfg.run.log_len = 400;
    let run = run_cse(&cfg)?;
    write_run(&run, &out, Dumps::parse("hovmoller,cycles")?)?;

    let hits: Vec<_> = run.records.iter().filter(|r| r.intervention).collect();
    println!("{} cycles logged, {} with an intervention", run.records.len(), hits.len());
    for r in hits.iter().take(10) {
        let grids: Vec<usize> = r.delta.iter().enumerate().filter(|(_, d)| **d != 0.0).map(|(i, _)| i + 1).collect();
        println!("  step {:>6}: trigger {:?}, perturbed {:?}, max |δ| {:.3}", r.step, r.trigger, grids, r.delta_max_abs);
    }
    println!("wrote {}", out.display());
    Ok(())
}
