//! Smooth noisy curves onto B-splines, pick the basis size, and fit
//! functional archetypes in the basis metric.

use archetypal::archetypes::FitOptions;
use archetypal::fdbasis::{
    functional_fit, select_basis_count, BasisFamily, BasisSystem, FitMode, FunctionalDataset, SampledCurve,
};
use archetypal::robust::LossSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> archetypal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
    let shapes: [fn(f64) -> f64; 3] = [|t| (6.0 * t).sin(), |t| 4.0 * t * (1.0 - t), |t| t * t];
    let curves: Vec<SampledCurve> = (0..60)
        .map(|i| {
            let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let s: f64 = w.iter().sum();
            let y = grid
                .iter()
                .map(|&t| {
                    (0..3).map(|j| w[j] / s * shapes[j](t)).sum::<f64>() + 0.05 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            SampledCurve::new(format!("c{i:02}"), grid.clone(), y)
        })
        .collect();

    let sel = select_basis_count(&curves, BasisFamily::CubicBspline, (0.0, 1.0), 4..=20)?;
    for (m, v) in &sel.curve {
        println!("m = {m:2}: residual variance {v:.6}");
    }
    println!("chosen m = {}", sel.m);

    let labels = curves.iter().map(|c| c.label.clone()).collect();
    let basis = BasisSystem::cubic_bspline(sel.m, (0.0, 1.0))?;
    let ds = FunctionalDataset::from_samples(&[("y".into(), curves)], basis, labels)?;
    let model = functional_fit(&ds, 3, &FitOptions::default(), LossSpec::squared(), FitMode::Aa)?;
    println!("functional AA objective {:.5}", model.objective);
    for j in 0..3 {
        let z: Vec<f64> = model.archetypes.row(j).iter().copied().collect();
        let samples: Vec<String> =
            [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&t| format!("{:.3}", ds.basis().curve_at(&z, t))).collect();
        println!("archetype {} at t = 0, .25, .5, .75, 1: {}", j + 1, samples.join(" "));
    }
    Ok(())
}
