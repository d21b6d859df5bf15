//! Climatology of the free Lorenz 96 system: the percentiles of X and how
//! often it exceeds 12.
//!
//!     cargo run --release --example free_run [eval_steps]

use enkc::harness::{run_uncontrolled, ExperimentConfig};

fn main() -> enkc::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if let Some(n) = std::env::args().nth(1) {
        cfg.run.eval_steps = n.parse().expect("eval_steps must be an integer");
    }
    let dist = run_uncontrolled(&cfg)?;
    println!("{} samples ({} steps x K = {})", dist.len(), cfg.run.eval_steps, cfg.model.k);
    for p in [0.0, 1.0, 25.0, 50.0, 75.0, 99.0, 99.9, 99.99, 99.999, 100.0] {
        println!("P{p:<7} {:>8.4}", dist.percentile(p)?);
    }
    println!("fraction above 12: {:.4}%", 100.0 * dist.fraction_above(12.0));
    Ok(())
}
