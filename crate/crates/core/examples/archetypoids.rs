//! Archetypoids: archetypes restricted to actual cases, found by BUILD and SWAP.

use archetypal::archetypes::FitOptions;
use archetypal::archetypoids::fit_ada_detailed;
use archetypal::robust::LossSpec;
use archetypal::DataMatrix;

fn main() -> archetypal::Result<()> {
    let rows = vec![
        vec![0.0, 0.0],
        vec![4.0, 0.2],
        vec![0.1, 3.9],
        vec![3.8, 4.1],
        vec![2.0, 2.0],
        vec![1.0, 2.5],
        vec![3.0, 1.2],
        vec![2.2, 3.1],
    ];
    let labels = ["sw", "se", "nw", "ne", "c1", "c2", "c3", "c4"].map(String::from).to_vec();
    let data = DataMatrix::new(DataMatrix::from_rows(&rows)?.values().clone(), labels, vec!["x".into(), "y".into()])?;

    let report = fit_ada_detailed(&data, 3, &FitOptions::default(), LossSpec::squared())?;
    let name = |i: &usize| data.row_labels()[*i].clone();
    for (t, set) in ["nearest", "alpha", "beta"].iter().zip(report.candidates.as_array()) {
        println!("BUILD from {t:<7}: {:?}", set.iter().map(name).collect::<Vec<_>>());
    }
    for (set, obj) in report.refined_sets.iter().zip(report.refined_objectives) {
        println!("after SWAP: {:?} RSS {obj:.4}", set.iter().map(name).collect::<Vec<_>>());
    }
    let members = report.model.member_indices.as_ref().expect("archetypoids");
    println!("archetypoids: {:?}", members.iter().map(name).collect::<Vec<_>>());
    Ok(())
}
