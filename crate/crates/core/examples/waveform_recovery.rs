//! The three-class waveform curves are mixtures of three triangles; k = 3
//! archetypes should line up with those triangles.

use archetypal::archetypes::{fit_aa, FitOptions};
use archetypal::simgen::{gen_waveform, WaveformSpec};
use archetypal::DataMatrix;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn main() -> archetypal::Result<()> {
    let data = gen_waveform(&WaveformSpec::new(150, 4))?;
    let model = fit_aa(&DataMatrix::from_values(data.curves.clone())?, 3, &FitOptions::default())?;
    for j in 0..3 {
        let z: Vec<f64> = model.archetypes.row(j).iter().copied().collect();
        let corr: Vec<String> = (0..3)
            .map(|h| {
                let t: Vec<f64> = data.templates.row(h).iter().copied().collect();
                format!("h{} {:+.3}", h + 1, correlation(&z, &t))
            })
            .collect();
        println!("archetype {}: {}", j + 1, corr.join("  "));
    }
    Ok(())
}
