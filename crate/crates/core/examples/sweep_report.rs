//! A small resumable sweep: weights x thresholds, stored one file per cell,
//! then aggregated into report.csv and summary.txt. Running it again skips
//! the finished cells.
//!
//!     cargo run --release --example sweep_report [out_dir] [workers]

use std::path::PathBuf;

use enkc::control::Sparsifier;
use enkc::harness::{sweep, ExperimentConfig, SweepGrid};
use enkc::output::ResultStore;

fn main() -> enkc::Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "sweep_out".into()).into();
    let workers: usize = args.next().map_or(1, |s| s.parse().expect("workers"));

    let mut base = ExperimentConfig::default();
    base.run.spin_up_steps = 2_000;
    base.run.eval_steps = 10_000;
    let grid = SweepGrid {
        ensemble_sizes: vec![40],
        weight_sds: vec![0.01, 0.1, 1.0],
        sparsifiers: [1.0, 0.5, 0.25].map(|l| Sparsifier::Thresholding { lambda_frac: l }).to_vec(),
        aoei: vec![false],
    };
    let cells = grid.cells(&base);
    println!("{} cells", cells.len());

    let store = ResultStore::open(&out)?;
    let outcomes = sweep(&cells, workers, Some(&store))?;
    let resumed = outcomes.iter().filter(|o| o.resumed).count();
    println!("{resumed} resumed, {} run", outcomes.len() - resumed);
    print!("{}", store.write_report(&out)?);
    Ok(())
}
