//! Archetypal analysis of a noisy triangle, with an elbow scan over k.

use archetypal::archetypes::{elbow_scan, fit_aa, FitOptions};
use archetypal::DataMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> archetypal::Result<()> {
    let corners = [[0.0, 0.0], [10.0, 0.0], [3.0, 8.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let s: f64 = w.iter().sum();
            (0..2).map(|d| (0..3).map(|j| w[j] / s * corners[j][d]).sum::<f64>() + 0.1 * rng.random::<f64>()).collect()
        })
        .collect();
    let data = DataMatrix::from_rows(&rows)?;
    let opts = FitOptions::default().with_seed(1);

    let model = fit_aa(&data, 3, &opts)?;
    println!("RSS {:.4}", model.objective);
    for j in 0..3 {
        println!("archetype {}: ({:.3}, {:.3})", j + 1, model.archetypes[(j, 0)], model.archetypes[(j, 1)]);
    }

    let elbow = elbow_scan(&data, 1, 6, &opts)?;
    for (k, rss) in &elbow.points {
        println!("k = {k}: RSS {rss:.4}");
    }
    println!("suggested k: {:?}", elbow.suggested_k);
    Ok(())
}
