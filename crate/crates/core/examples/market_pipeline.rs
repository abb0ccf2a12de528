//! From daily closes to a bivariate functional dataset (rolling returns and
//! betas), robust archetypoids for a few k, and sector profiles.

use archetypal::archetypes::FitOptions;
use archetypal::fdbasis::{functional_fit, BasisFamily, FitMode};
use archetypal::finance::{build_functional_panel, compute_features, filter_missing, load_panel, DEFAULT_BASIS_COUNT};
use archetypal::robust::{LossSpec, TuningPolicy};
use archetypal::simgen::{gen_market, MarketSpec};
use archetypal::taxonomy::sector_weights;

fn main() -> archetypal::Result<()> {
    let dir = std::env::temp_dir().join(format!("archetypal-market-{}", std::process::id()));
    let spec = MarketSpec::new(24, 800, 9);
    let source = gen_market(&spec)?.write_dir(&dir)?;

    let loaded = load_panel(&source)?;
    println!("{} symbols, {} rejected rows", loaded.panel.symbols().len(), loaded.rejects.len());
    let (panel, dropped) = filter_missing(&loaded.panel, spec.start, 0.2)?;
    for d in &dropped {
        println!("dropped {}: {}", d.symbol, d.reason);
    }
    let features = compute_features(&panel, 60)?;
    let fp = build_functional_panel(&features, BasisFamily::CubicBspline, DEFAULT_BASIS_COUNT)?;
    let ds = &fp.dataset;
    println!("dataset {} x {} ({} variables x m = {})", ds.n(), ds.coefficients().ncols(), ds.p(), ds.m());

    let loss = LossSpec::bisquare(TuningPolicy::Median6);
    for k in 2..=4 {
        let model = functional_fit(ds, k, &FitOptions::default(), loss, FitMode::Ada)?;
        let members = model.member_indices.as_ref().expect("archetypoids");
        let names: Vec<&str> = members.iter().map(|&i| ds.record_labels()[i].as_str()).collect();
        println!("k = {k}: {names:?}, objective {:.4}", model.objective);
        if k == 3 {
            let sectors: Vec<String> = fp.sectors.iter().map(|s| s.code().to_string()).collect();
            for (s, w) in sector_weights(&model.alpha, &sectors)? {
                println!("  {s:<3} {:.3?}", w);
            }
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
