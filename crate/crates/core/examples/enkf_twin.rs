//! Twin experiment without control: a stochastic EnKF with 40 members
//! tracks a Lorenz 96 nature run observed at every even grid point.
//!
//!     cargo run --release --example enkf_twin [cycles]

use enkc::ensemble::{forecast_in_place, EnkfAnalyzer, Ensemble, LocalizationConfig, ObservationModel};
use enkc::harness::make_nature;
use enkc::lorenz96::{rk4_step_in_place, ModelConfig, Rk4Workspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

fn main() -> enkc::Result<()> {
    let cycles: usize = std::env::args().nth(1).map_or(2_000, |s| s.parse().expect("cycles"));
    let model = ModelConfig::default();
    let obs = ObservationModel::even_grids(model.k, 1.0)?;
    let analyzer = EnkfAnalyzer::new(model.k, &obs, &LocalizationConfig::default())?;

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut nature = make_nature(1, &model, 10_000)?;
    let mut ens = Ensemble::perturbed_around(&nature, 40, 1.0, &mut rng)?;
    let mut ws = Rk4Workspace::new(model.k);

    let mut sum = 0.0;
    for step in 1..=cycles {
        rk4_step_in_place(&mut nature, &model, &mut ws, step)?;
        forecast_in_place(&mut ens, 1, &model)?;
        let y: Vec<f64> = obs
            .apply(&nature)
            .into_iter()
            .map(|v| v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let background = rmse(&ens.mean(), &nature);
        ens = analyzer.analyze(&ens, &y, &mut rng)?;
        let analysis = rmse(&ens.mean(), &nature);
        if step > cycles / 10 {
            sum += analysis;
        }
        if step % (cycles / 10).max(1) == 0 {
            println!("cycle {step:>6}: background RMSE {background:.3}, analysis RMSE {analysis:.3}");
        }
    }
    println!("mean analysis RMSE after spin-up: {:.3} (obs error sd 1.0)", sum / (cycles - cycles / 10) as f64);
    Ok(())
}
