//! One control step seen through each sparsifier: the raw perturbation
//! from the smoother gain, its control-localized, thresholded and randomly
//! selected versions.
//!
//!     cargo run --release --example sparsifiers

use enkc::control::{estimate_control, ControlProblem, Sparsifier};
use enkc::ensemble::Ensemble;
use enkc::harness::make_nature;
use enkc::lorenz96::{advance, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(name: &str, delta: &[f64]) {
    let cells: String = delta
        .iter()
        .map(|d| match d.abs() {
            a if a == 0.0 => '.',
            a if a < 0.01 => '-',
            a if a < 0.1 => 'o',
            _ => 'O',
        })
        .collect();
    let l2 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    let nz = delta.iter().filter(|d| **d != 0.0).count();
    println!("{name:<24} {cells}  nonzero {nz:>2}  L2 {l2:.4}");
}

fn main() -> enkc::Result<()> {
    let model = ModelConfig::default();
    let problem = ControlProblem::default();
    let mut nature = make_nature(7, &model, 10_000)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // walk nature forward until the ensemble forecast predicts an extreme
    let (ens, outcome) = loop {
        advance(&mut nature, 1, &model)?;
        let ens = Ensemble::perturbed_around(&nature, 40, 0.3, &mut rng)?;
        let out = estimate_control(&ens, &model, &problem, &Sparsifier::None, &mut rng)?;
        if !out.trigger.is_empty() {
            break (ens, out);
        }
    };
    println!("triggered grids {:?}, innovation {:?}", outcome.trigger.grids, outcome.innovation);
    println!("legend: . zero, - <0.01, o <0.1, O >=0.1\n");
    show("none", &outcome.perturbation.delta);
    for sp in [
        Sparsifier::ControlLocalization { lc: 5.0 },
        Sparsifier::ControlLocalization { lc: 2.0 },
        Sparsifier::Thresholding { lambda_frac: 0.25 },
        Sparsifier::Thresholding { lambda_frac: 0.5 },
        Sparsifier::Thresholding { lambda_frac: 1.0 },
        Sparsifier::RandomSelection { n_l: 3 },
    ] {
        let out = estimate_control(&ens, &model, &problem, &sp, &mut rng)?;
        let (method, scale) = sp.label();
        show(&format!("{method} {scale}"), &out.perturbation.delta);
    }
    Ok(())
}
