//! Adaptive pseudo-observation error inflation against a fixed R_c at the
//! same weight: smaller, steadier perturbations for somewhat less tail
//! reduction.
//!
//!     cargo run --release --example aoei [eval_steps]

use enkc::harness::{sweep, ExperimentConfig};

fn main() -> enkc::Result<()> {
    let mut base = ExperimentConfig::default();
    base.run.eval_steps = std::env::args().nth(1).map_or(14_600, |s| s.parse().expect("eval_steps"));
    let cells: Vec<ExperimentConfig> = [false, true]
        .into_iter()
        .map(|aoei| {
            let mut c = base.clone();
            c.control.aoei = aoei;
            c
        })
        .collect();

    println!("{:<6} {:>10} {:>10} {:>10} {:>10} {:>10}", "aoei", "reduction", "mean L2", "L2 q3", "max |δ|", "freq %");
    for o in sweep(&cells, 2, None)? {
        let m = o.result.map_err(enkc::Error::Invalid)?;
        println!(
            "{:<6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.3}",
            o.config.control.aoei,
            m.reduction,
            m.mean_l2_per_intervention,
            m.l2_box.q3,
            m.mean_max_per_intervention,
            100.0 * m.intervention_frequency
        );
    }
    Ok(())
}
