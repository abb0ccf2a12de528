//! How often does an outlier end up as an archetypoid? Pass the number of
//! replicates as the first argument (default 10).

use archetypal::detect::{inclusion_experiment, radab_metrics, ExperimentConfig};
use archetypal::robust::TuningPolicy;
use archetypal::simgen::ContaminationSpec;

fn main() -> archetypal::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let config = ExperimentConfig::new(2, replicates, 1000);
    let policies = [
        TuningPolicy::Median6,
        TuningPolicy::Percentile { j: 50 },
        TuningPolicy::Percentile6 { j: 25 },
        TuningPolicy::Percentile6 { j: 75 },
    ];
    for cr in [0.1, 0.15] {
        let spec = ContaminationSpec::new(100, cr, 0);
        let (rows, _) = inclusion_experiment(&spec, &policies, &config)?;
        for r in rows {
            println!("cr {cr:<4} {:<8} inclusion {:5.1}% (sd {:.1})", r.policy, r.mean, r.sd);
        }
        let (rows, _) = radab_metrics(&spec, &config)?;
        for r in rows {
            println!("cr {cr:<4} radab    {:<8} {:.3}", r.metric, r.mean);
        }
    }
    Ok(())
}
