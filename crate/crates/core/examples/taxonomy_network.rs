//! Threshold clustering of mixture weights and a GraphViz export.

use archetypal::archetypes::FitOptions;
use archetypal::archetypoids::fit_ada;
use archetypal::robust::LossSpec;
use archetypal::taxonomy::{assign_clusters, build_network, TaxonomyConfig};
use archetypal::DataMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> archetypal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let data = DataMatrix::from_rows(&rows)?;
    let model = fit_ada(&data, 4, &FitOptions::default(), LossSpec::squared())?;

    for u in [0.9, 0.8, 0.7] {
        let a = assign_clusters(&model.alpha, &TaxonomyConfig::new(u)?)?;
        let pure: usize = a.pure.iter().map(Vec::len).sum();
        let pairs: usize = a.pairs.iter().map(|(_, m)| m.len()).sum();
        println!("U = {u}: {pure} pure, {pairs} pair, {} mixture, {} unassigned", a.mixtures.len(), a.unassigned.len());
    }
    let a = assign_clusters(&model.alpha, &TaxonomyConfig::default())?;
    let sectors: Vec<String> = (0..40).map(|i| ["E", "F", "T"][i % 3].to_string()).collect();
    let net = build_network(&a, &model, data.row_labels(), Some(&sectors))?;
    print!("{}", net.to_dot());
    Ok(())
}
