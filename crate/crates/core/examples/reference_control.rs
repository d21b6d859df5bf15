//! The reference control experiment: N = 40, R_c sd 0.1, thresholding at
//! Λ = 0.5. Prints the upper tail of the controlled and uncontrolled
//! distributions side by side.
//!
//!     cargo run --release --example reference_control [eval_steps]
//!
//! The default is a tenth of the full 146,000 evaluation steps; pass 146000
//! for the full run (about half a minute in release mode).

use enkc::harness::{run_cse, ExperimentConfig};

fn main() -> enkc::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.run.eval_steps = std::env::args().nth(1).map_or(14_600, |s| s.parse().expect("eval_steps"));
    let run = run_cse(&cfg)?;

    println!("{:>9} {:>12} {:>12}", "pct", "uncontrolled", "controlled");
    for p in [50.0, 99.0, 99.9, 99.95, 99.99, 99.995, 99.999, 100.0] {
        println!(
            "{p:>9} {:>12.4} {:>12.4}",
            run.uncontrolled.percentile(p)?,
            run.controlled.percentile(p)?
        );
    }
    let m = &run.summary;
    println!();
    println!("P99.999 reduction      {:.4}", m.reduction);
    println!("interventions          {} of {} cycles ({:.2}%)", m.interventions, m.eval_cycles, 100.0 * m.intervention_frequency);
    println!("grids per intervention {:.2}", m.mean_support_per_intervention);
    println!("mean |δ|max, L2        {:.4}, {:.4}", m.mean_max_per_intervention, m.mean_l2_per_intervention);
    println!("analysis RMSE          {:.4}", m.mean_analysis_rmse);
    Ok(())
}
