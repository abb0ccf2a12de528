//! Robust archetypoid residuals plus a box-plot fence flag contaminated curves.

use archetypal::archetypes::FitOptions;
use archetypal::detect::{radab, score};
use archetypal::fdbasis::{BasisSystem, FunctionalDataset, SampledCurve};
use archetypal::simgen::{gen_contaminated, ContaminationSpec};

fn main() -> archetypal::Result<()> {
    let data = gen_contaminated(&ContaminationSpec::new(100, 0.1, 21))?;
    let labels: Vec<String> = (0..100).map(|i| format!("c{i:03}")).collect();
    let curves = SampledCurve::from_grid(&data.grid, &data.curves, &labels)?;
    let basis = BasisSystem::cubic_bspline(20, (0.0, 1.0))?;
    let ds = FunctionalDataset::from_samples(&[("x".into(), curves)], basis, labels.clone())?;

    let report = radab(&ds, 2, &FitOptions::default())?;
    let flagged: Vec<&str> = labels.iter().zip(&report.flags).filter(|(_, &f)| f).map(|(l, _)| l.as_str()).collect();
    println!("fence {:.4}; flagged {flagged:?}", report.fence);
    let m = score(&report.flags, &data.outlier)?;
    println!("TPR {:.2}  FPR {:.3}  MCC {:.3}", m.tpr, m.fpr, m.mcc);
    Ok(())
}
