//! Outlier detection from robust archetypoid residuals, detection scoring,
//! and the replicated contamination experiments.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archetypes::{ArchetypalModel, Engine, FitOptions};
use crate::archetypoids;
use crate::error::{Error, Result};
use crate::fdbasis::{self, BasisFamily, BasisSystem, FitMode, FunctionalDataset, SampledCurve};
use crate::robust::{quantile, LossSpec, TuningPolicy};
use crate::simgen::{self, ContaminatedData, ContaminationSpec};

/// Tuning used by the detector: the median residual norm, no multiplier.
pub const RADAB_POLICY: TuningPolicy = TuningPolicy::Percentile { j: 50 };

#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub residual_norms: Vec<f64>,
    pub fence: f64,
    pub flags: Vec<bool>,
    pub model: ArchetypalModel,
}

/// `Q3 + 1.5 IQR` with linearly interpolated quartiles.
pub fn upper_fence(norms: &[f64]) -> f64 {
    let q1 = quantile(norms, 0.25);
    let q3 = quantile(norms, 0.75);
    q3 + 1.5 * (q3 - q1)
}

pub fn flag_outliers(norms: &[f64]) -> (f64, Vec<bool>) {
    let fence = upper_fence(norms);
    (fence, norms.iter().map(|&r| r > fence).collect())
}

/// Fits robust archetypoids and flags records whose `W`-norm residual lies
/// above the upper box-plot fence.
pub fn radab(dataset: &FunctionalDataset, k: usize, opts: &FitOptions) -> Result<OutlierReport> {
    let model = fdbasis::functional_fit(dataset, k, opts, LossSpec::bisquare(RADAB_POLICY), FitMode::Ada)?;
    let residual_norms = dataset.residual_norms(&model)?;
    let (fence, flags) = flag_outliers(&residual_norms);
    Ok(OutlierReport { residual_norms, fence, flags, model })
}

/// The same detector on an already rotated coefficient matrix.
pub(crate) fn radab_values(y: &DMatrix<f64>, k: usize, opts: &FitOptions) -> Result<OutlierReport> {
    let model = archetypoids::ada_values(y, k, opts, LossSpec::bisquare(RADAB_POLICY))?.model;
    let residual_norms = model.residual_norms(y)?;
    let (fence, flags) = flag_outliers(&residual_norms);
    Ok(OutlierReport { residual_norms, fence, flags, model })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub mcc: f64,
}

/// TPR, FPR and Matthews correlation. With no true positives TPR is 1; with
/// no true negatives FPR is 0; MCC is 0 whenever a confusion margin is empty.
pub fn score(flags: &[bool], truth: &[bool]) -> Result<DetectionMetrics> {
    if flags.len() != truth.len() {
        return Err(Error::input(format!("{} flags for {} labels", flags.len(), truth.len())));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&f, &t) in flags.iter().zip(truth) {
        match (f, t) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let tpr = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 1.0 };
    let fpr = if fp + tn > 0.0 { fp / (fp + tn) } else { 0.0 };
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if denom > 0.0 { (tp * tn - fp * fn_) / denom.sqrt() } else { 0.0 };
    Ok(DetectionMetrics { tpr, fpr, mcc })
}

/// How simulated curves are turned into vectors before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveRepresentation {
    /// Grid values scaled so the Euclidean norm approximates the L2 norm.
    #[default]
    Raw,
    /// Least-squares basis coefficients under the basis `W`-norm.
    Basis { family: BasisFamily, m: usize },
}

impl CurveRepresentation {
    /// Rows whose Euclidean norms are the curves' functional norms.
    pub fn embed(&self, grid: &[f64], curves: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match *self {
            CurveRepresentation::Raw => {
                let step = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
                Ok(curves * step.sqrt())
            }
            CurveRepresentation::Basis { family, m } => Ok(self.dataset(grid, curves, family, m)?.rotated()?),
        }
    }

    fn dataset(&self, grid: &[f64], curves: &DMatrix<f64>, family: BasisFamily, m: usize) -> Result<FunctionalDataset> {
        let basis = BasisSystem::new(family, m, (grid[0], grid[grid.len() - 1]))?;
        let labels: Vec<String> = (0..curves.nrows()).map(|i| format!("c{i}")).collect();
        let samples = SampledCurve::from_grid(grid, curves, &labels)?;
        FunctionalDataset::from_samples(&[("x".to_string(), samples)], basis, labels)
    }
}

/// One row of an experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub policy: String,
    pub cr: f64,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Settings shared by the replicated experiments. Replicate `r` uses seed
/// `base_seed + r` for both data generation and fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub k: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub representation: CurveRepresentation,
    pub fit: FitOptions,
}

impl ExperimentConfig {
    pub fn new(k: usize, replicates: usize, base_seed: u64) -> Self {
        ExperimentConfig {
            k,
            replicates,
            base_seed,
            representation: CurveRepresentation::default(),
            fit: FitOptions::default(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|r| self.base_seed.wrapping_add(r)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::input("replicates must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        self.fit.validate()
    }

    fn replicate(&self, spec: &ContaminationSpec, seed: u64) -> Result<(ContaminatedData, DMatrix<f64>, FitOptions)> {
        let data = simgen::gen_contaminated(&spec.with_seed(seed))?;
        let y = self.representation.embed(&data.grid, &data.curves)?;
        Ok((data, y, self.fit.with_seed(seed)))
    }
}

/// Per-replicate outcome of the inclusion experiment: for each loss, whether
/// some outlier was chosen as an archetypoid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionOutcome {
    pub seed: u64,
    pub included: Vec<bool>,
}

/// Loss labels used in the inclusion table: `squared` then each policy name.
pub fn inclusion_labels(policies: &[TuningPolicy]) -> Vec<String> {
    std::iter::once("squared".to_string()).chain(policies.iter().map(|p| p.name())).collect()
}

/// Percentage of replicates in which any outlier is a selected archetypoid,
/// for squared-loss ADA and for robust ADA under each policy.
pub fn inclusion_experiment(
    spec: &ContaminationSpec,
    policies: &[TuningPolicy],
    config: &ExperimentConfig,
) -> Result<(Vec<ExperimentRow>, Vec<InclusionOutcome>)> {
    spec.validate()?;
    config.validate()?;
    for p in policies {
        p.validate()?;
    }
    let losses: Vec<LossSpec> =
        std::iter::once(LossSpec::squared()).chain(policies.iter().map(|&p| LossSpec::bisquare(p))).collect();
    let outcomes: Vec<InclusionOutcome> = config
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let (data, y, opts) = config.replicate(spec, seed)?;
            let engine = Engine::new(&y, opts.penalty_weight);
            let included = losses
                .iter()
                .map(|&loss| {
                    let aa = archetypoids::build_aa(&y, config.k, &opts, loss)?;
                    let report = archetypoids::ada_from_aa(&engine, aa, loss)?;
                    let members = report.model.member_indices.expect("archetypoids have members");
                    Ok(members.iter().any(|&i| data.outlier[i]))
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok(InclusionOutcome { seed, included })
        })
        .collect::<Result<_>>()?;
    let rows = inclusion_labels(policies)
        .into_iter()
        .enumerate()
        .map(|(l, policy)| {
            let hits: Vec<f64> = outcomes.iter().map(|o| if o.included[l] { 100.0 } else { 0.0 }).collect();
            let (mean, sd) = mean_sd(&hits);
            ExperimentRow { policy, cr: spec.cr, metric: "inclusion_pct".into(), mean, sd }
        })
        .collect();
    Ok((rows, outcomes))
}

/// Replicated detector performance: TPR and FPR in percent, MCC as a ratio.
pub fn radab_metrics(
    spec: &ContaminationSpec,
    config: &ExperimentConfig,
) -> Result<(Vec<ExperimentRow>, Vec<DetectionMetrics>)> {
    spec.validate()?;
    config.validate()?;
    let per: Vec<DetectionMetrics> = config
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let (data, y, opts) = config.replicate(spec, seed)?;
            let report = radab_values(&y, config.k, &opts)?;
            score(&report.flags, &data.outlier)
        })
        .collect::<Result<_>>()?;
    let summarize = |name: &str, f: &dyn Fn(&DetectionMetrics) -> f64| {
        let vals: Vec<f64> = per.iter().map(f).collect();
        let (mean, sd) = mean_sd(&vals);
        ExperimentRow { policy: "radab".into(), cr: spec.cr, metric: name.into(), mean, sd }
    };
    let rows = vec![
        summarize("tpr_pct", &|m| 100.0 * m.tpr),
        summarize("fpr_pct", &|m| 100.0 * m.fpr),
        summarize("mcc", &|m| m.mcc),
    ];
    Ok((rows, per))
}

/// Writes `policy,cr,metric,mean,sd`.
pub fn write_rows(path: impl AsRef<Path>, rows: &[ExperimentRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
