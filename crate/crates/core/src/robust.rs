//! Bisquare (Tukey biweight) loss and robust archetype / archetypoid fits.
//!
//! The robust objective replaces the residual sum of squares by
//! `sum_i rho_c(||r_i||)`. Robust AA is solved by iteratively reweighted
//! alternating least squares: case weights are `rho'(r)/r`, the tuning
//! constant `c` is re-resolved from the residual norms before each outer
//! iteration, and each outer iteration runs one weighted alternating pass.
//! Robust ADA resolves `c` once from the initial AA residuals and keeps it
//! fixed while SWAP compares exchanges.

use serde::{Deserialize, Serialize};

use crate::archetypes::{self, ArchetypalModel, Engine, FitOptions};
use crate::archetypoids;
use crate::data::DataMatrix;
use crate::error::{Error, Result};

/// Maximum outer reweighting iterations for robust AA.
pub const MAX_OUTER_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Squared,
    Bisquare,
}

/// How the bisquare tuning constant is derived from the residual norms.
///
/// Percentiles are taken over the non-zero residual norms with linear
/// interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TuningPolicy {
    Fixed {
        c: f64,
    },
    /// Six times the median.
    Median6,
    Percentile {
        j: u8,
    },
    /// Six times the `j`-th percentile.
    Percentile6 {
        j: u8,
    },
}

impl TuningPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TuningPolicy::Fixed { c } if !(c > 0.0 && c.is_finite()) => {
                Err(Error::input("fixed tuning constant must be positive"))
            }
            TuningPolicy::Percentile { j } | TuningPolicy::Percentile6 { j } if ![25, 50, 75].contains(&j) => {
                Err(Error::input(format!("percentile must be 25, 50 or 75, got {j}")))
            }
            _ => Ok(()),
        }
    }

    /// Short name used in tables and on the command line.
    pub fn name(&self) -> String {
        match *self {
            TuningPolicy::Fixed { c } => format!("fixed{c}"),
            TuningPolicy::Median6 => "median6".into(),
            TuningPolicy::Percentile { j } => format!("p{j}"),
            TuningPolicy::Percentile6 { j } => format!("6p{j}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let p = match s {
            "median6" => TuningPolicy::Median6,
            _ if s.starts_with("6p") => TuningPolicy::Percentile6 { j: parse_pct(&s[2..])? },
            _ if s.starts_with('p') => TuningPolicy::Percentile { j: parse_pct(&s[1..])? },
            _ if s.starts_with("fixed") => TuningPolicy::Fixed {
                c: s[5..].parse().map_err(|_| Error::input(format!("bad fixed constant in '{s}'")))?,
            },
            _ => return Err(Error::input(format!("unknown tuning policy '{s}'"))),
        };
        p.validate()?;
        Ok(p)
    }

    /// The six percentile policies of the tuning sensitivity tables.
    pub fn percentile_grid() -> Vec<TuningPolicy> {
        [25, 50, 75]
            .iter()
            .map(|&j| TuningPolicy::Percentile { j })
            .chain([25, 50, 75].iter().map(|&j| TuningPolicy::Percentile6 { j }))
            .collect()
    }
}

fn parse_pct(s: &str) -> Result<u8> {
    s.parse().map_err(|_| Error::input(format!("bad percentile '{s}'")))
}

/// Loss descriptor carried by fitted models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    pub policy: Option<TuningPolicy>,
    pub resolved_c: Option<f64>,
}

impl LossSpec {
    pub fn squared() -> Self {
        LossSpec { family: LossFamily::Squared, policy: None, resolved_c: None }
    }

    pub fn bisquare(policy: TuningPolicy) -> Self {
        LossSpec { family: LossFamily::Bisquare, policy: Some(policy), resolved_c: None }
    }

    pub fn is_robust(&self) -> bool {
        self.family == LossFamily::Bisquare
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            LossFamily::Squared => Ok(()),
            LossFamily::Bisquare => {
                let p = self.policy.ok_or_else(|| Error::input("bisquare loss requires a tuning policy"))?;
                p.validate()?;
                if let Some(c) = self.resolved_c {
                    if !(c > 0.0) {
                        return Err(Error::input("resolved tuning constant must be positive"));
                    }
                }
                Ok(())
            }
        }
    }

    pub(crate) fn with_c(mut self, c: f64) -> Self {
        self.resolved_c = Some(c);
        self
    }

    /// Loss of one residual norm. Bisquare losses need a resolved constant;
    /// without one they fall back to the squared norm.
    pub fn eval(&self, norm: f64) -> f64 {
        match (self.family, self.resolved_c) {
            (LossFamily::Bisquare, Some(c)) => rho(norm, c),
            _ => norm * norm,
        }
    }

    pub fn total(&self, norms: &[f64]) -> f64 {
        norms.iter().map(|&r| self.eval(r)).sum()
    }
}

/// `rho_c(r) = c^2/6 (1 - (1 - r^2/c^2)^3)` for `r <= c`, `c^2/6` beyond.
pub fn bisquare_loss(norm: f64, c: f64) -> Result<f64> {
    check_args(norm, c)?;
    Ok(rho(norm, c))
}

/// `rho'(r) / r = (1 - r^2/c^2)^2` for `r <= c`, zero beyond; one at `r = 0`.
pub fn bisquare_weight(norm: f64, c: f64) -> Result<f64> {
    check_args(norm, c)?;
    Ok(weight(norm, c))
}

fn check_args(norm: f64, c: f64) -> Result<()> {
    if !(norm >= 0.0) {
        return Err(Error::input(format!("residual norm must be non-negative, got {norm}")));
    }
    if !(c > 0.0) {
        return Err(Error::input(format!("tuning constant must be positive, got {c}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn rho(norm: f64, c: f64) -> f64 {
    let cap = c * c / 6.0;
    if norm > c {
        return cap;
    }
    let u = 1.0 - (norm / c).powi(2);
    cap * (1.0 - u * u * u)
}

#[inline]
pub(crate) fn weight(norm: f64, c: f64) -> f64 {
    if norm > c {
        return 0.0;
    }
    let u = 1.0 - (norm / c).powi(2);
    u * u
}

/// Linear-interpolation quantile (`q` in `[0, 1]`) of an unsorted sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Resolves the bisquare tuning constant from residual norms.
pub fn resolve_tuning(residual_norms: &[f64], policy: TuningPolicy) -> Result<f64> {
    policy.validate()?;
    if let TuningPolicy::Fixed { c } = policy {
        return Ok(c);
    }
    let nonzero: Vec<f64> = residual_norms.iter().copied().filter(|&r| r > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Numeric("all residual norms are zero; tuning constant undefined".into()));
    }
    let (q, factor) = match policy {
        TuningPolicy::Median6 => (0.5, 6.0),
        TuningPolicy::Percentile { j } => (j as f64 / 100.0, 1.0),
        TuningPolicy::Percentile6 { j } => (j as f64 / 100.0, 6.0),
        TuningPolicy::Fixed { .. } => unreachable!(),
    };
    Ok(factor * quantile(&nonzero, q))
}

/// Per-outer-iteration record of a robust AA fit.
#[derive(Debug, Clone, Copy)]
pub struct IrlsStep {
    pub c: f64,
    /// Robust objective at the start of the iteration, under `c`.
    pub before: f64,
    /// Robust objective after the weighted pass, under the same `c`.
    pub after: f64,
}

/// Robust AA with its reweighting trace.
#[derive(Debug, Clone)]
pub struct RobustAaFit {
    pub model: ArchetypalModel,
    pub steps: Vec<IrlsStep>,
}

/// When robust AA re-resolves `c` from the residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningSchedule {
    /// Before every outer iteration.
    #[default]
    EveryIteration,
    /// Once, from the residuals of each restart's starting model.
    Once,
}

/// Robust archetypal analysis under the bisquare loss.
pub fn fit_robust_aa(data: &DataMatrix, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<ArchetypalModel> {
    Ok(fit_robust_aa_traced(data, k, opts, loss)?.model)
}

/// [`fit_robust_aa`] that also returns the reweighting trace of the chosen restart.
pub fn fit_robust_aa_traced(data: &DataMatrix, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<RobustAaFit> {
    robust_aa_values(data.values(), k, opts, loss, TuningSchedule::EveryIteration)
}

/// [`fit_robust_aa_traced`] with an explicit `c` schedule.
pub fn fit_robust_aa_scheduled(
    data: &DataMatrix,
    k: usize,
    opts: &FitOptions,
    loss: LossSpec,
    schedule: TuningSchedule,
) -> Result<RobustAaFit> {
    robust_aa_values(data.values(), k, opts, loss, schedule)
}

pub(crate) fn robust_aa_values(
    x: &nalgebra::DMatrix<f64>,
    k: usize,
    opts: &FitOptions,
    loss: LossSpec,
    schedule: TuningSchedule,
) -> Result<RobustAaFit> {
    loss.validate()?;
    if !loss.is_robust() {
        return Err(Error::input("robust AA requires the bisquare loss"));
    }
    let policy = loss.policy.expect("validated");
    archetypes::check_fit_args(x, k, opts)?;
    let engine = Engine::new(x, opts.penalty_weight);

    let runs = archetypes::run_restarts(opts, |restart| {
        let mut rng = archetypes::restart_rng(opts.seed, restart as u64);
        let beta = archetypes::dirichlet_beta(k, x.nrows(), &mut rng);
        irls_from(&engine, beta, opts, policy, schedule)
    })?;

    // Each restart resolves its own constant, so objectives are compared
    // under one shared constant: the median of the per-restart constants.
    let cs: Vec<f64> = runs.iter().filter_map(|r| r.model.loss.resolved_c).collect();
    let idx = if cs.is_empty() {
        0
    } else {
        let shared = quantile(&cs, 0.5);
        runs.iter()
            .enumerate()
            .map(|(i, r)| {
                let score: f64 = engine.residual_norms_of(&r.model).iter().map(|&n| rho(n, shared)).sum();
                (i, score)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .expect("at least one restart")
    };
    let mut best = runs.into_iter().nth(idx).expect("index in range");
    best.model.loss = LossSpec { resolved_c: best.model.loss.resolved_c, ..loss };
    Ok(best)
}

fn irls_from(
    engine: &Engine<'_>,
    beta: nalgebra::DMatrix<f64>,
    opts: &FitOptions,
    policy: TuningPolicy,
    schedule: TuningSchedule,
) -> Result<RobustAaFit> {
    let mut state = engine.state_from_beta(beta)?;
    let mut norms = engine.residual_norms(&state);
    let mut steps = Vec::new();
    let mut history = Vec::new();

    if norms.iter().all(|&r| r == 0.0) {
        let model = engine.finish(state, 0.0, LossSpec::bisquare(policy), vec![0.0]);
        return Ok(RobustAaFit { model, steps });
    }

    let mut c = resolve_tuning(&norms, policy)?;
    let mut prev: Option<f64> = None;
    for outer in 0..MAX_OUTER_ITERS {
        if outer > 0 && schedule == TuningSchedule::EveryIteration {
            c = match resolve_tuning(&norms, policy) {
                Ok(c) => c,
                // Exact fit: nothing left to reweight.
                Err(_) => break,
            };
        }
        let before: f64 = norms.iter().map(|&r| rho(r, c)).sum();
        let weights: Vec<f64> = norms.iter().map(|&r| weight(r, c)).collect();
        engine.weighted_pass(&mut state, Some(&weights))?;
        norms = engine.residual_norms(&state);
        let after: f64 = norms.iter().map(|&r| rho(r, c)).sum();
        steps.push(IrlsStep { c, before, after });
        history.push(after);

        if let Some(p) = prev {
            let rel = (p - after).abs() / p.abs().max(f64::MIN_POSITIVE);
            if rel < opts.rel_tol {
                break;
            }
        }
        prev = Some(after);
    }
    let objective: f64 = norms.iter().map(|&r| rho(r, c)).sum();
    let model = engine.finish(state, objective, LossSpec::bisquare(policy).with_c(c), history);
    Ok(RobustAaFit { model, steps })
}

/// Robust archetypoid analysis: BUILD from a robust AA fit with the same
/// policy, `c` resolved once from that fit's residual norms, SWAP under the
/// bisquare objective.
pub fn fit_robust_ada(data: &DataMatrix, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<ArchetypalModel> {
    loss.validate()?;
    if !loss.is_robust() {
        return Err(Error::input("robust ADA requires the bisquare loss"));
    }
    archetypoids::fit_ada(data, k, opts, loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn once_schedule_holds_c() {
        let rows: Vec<Vec<f64>> =
            (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).chain([vec![30.0, 30.0]]).collect();
        let data = DataMatrix::from_rows(&rows).unwrap();
        let loss = LossSpec::bisquare(TuningPolicy::Median6);
        let fit = fit_robust_aa_scheduled(&data, 3, &FitOptions::default(), loss, TuningSchedule::Once).unwrap();
        let c0 = fit.steps[0].c;
        assert!(fit.steps.iter().all(|s| s.c == c0));
        assert_eq!(fit.model.loss.resolved_c, Some(c0));
        for s in &fit.steps {
            assert!(s.after <= s.before * (1.0 + 1e-8) + 1e-12);
        }
        for w in fit.steps.windows(2) {
            assert!(w[1].before <= w[0].after * (1.0 + 1e-8) + 1e-12);
        }
    }

    #[test]
    fn loss_at_reference_points() {
        assert_eq!(bisquare_loss(0.0, 3.0).unwrap(), 0.0);
        let c = 2.5;
        assert!((bisquare_loss(c, c).unwrap() - c * c / 6.0).abs() < 1e-12);
        assert!((bisquare_loss(2.0 * c, c).unwrap() - c * c / 6.0).abs() < 1e-12);
        // 4/6 * (1 - (3/4)^3) = 37/96.
        assert!((bisquare_loss(1.0, 2.0).unwrap() - 37.0 / 96.0).abs() < 1e-12);
    }

    #[test]
    fn weight_at_reference_points() {
        assert_eq!(bisquare_weight(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(bisquare_weight(1.0, 1.0).unwrap(), 0.0);
        assert_eq!(bisquare_weight(5.0, 1.0).unwrap(), 0.0);
        assert!((bisquare_weight(1.0, 2.0).unwrap() - 9.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn bad_arguments() {
        assert!(bisquare_loss(-1.0, 1.0).is_err());
        assert!(bisquare_loss(1.0, 0.0).is_err());
        assert!(bisquare_weight(1.0, -2.0).is_err());
        assert!(bisquare_weight(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn weight_is_derivative_over_norm() {
        // Central finite differences of rho against the closed form.
        let c = 1.7;
        for i in 1..40 {
            let r = i as f64 * 0.05;
            let h = 1e-6;
            let d = (rho(r + h, c) - rho(r - h, c)) / (2.0 * h);
            assert!((d / r - weight(r, c)).abs() < 1e-6, "r = {r}");
        }
    }

    #[test]
    fn rho_is_monotone_and_bounded() {
        let c = 3.0;
        let mut last = 0.0;
        for i in 0..=1000 {
            let r = i as f64 * 0.01;
            let v = rho(r, c);
            assert!(v >= last);
            assert!(v <= c * c / 6.0 + 1e-15);
            last = v;
        }
        assert!(rho(1e-8, c) / 1e-8 < 1e-7 * c);
        assert!(weight(c, c) == 0.0 && weight(c * (1.0 - 1e-9), c) < 1e-15);
    }

    #[test]
    fn tuning_policies() {
        let norms = [1.0, 2.0, 3.0, 0.0];
        assert_eq!(resolve_tuning(&norms, TuningPolicy::Median6).unwrap(), 12.0);
        assert_eq!(resolve_tuning(&norms, TuningPolicy::Percentile { j: 50 }).unwrap(), 2.0);
        let norms = [10.0, 20.0, 30.0, 40.0];
        assert!((resolve_tuning(&norms, TuningPolicy::Percentile6 { j: 25 }).unwrap() - 105.0).abs() < 1e-12);
        assert_eq!(resolve_tuning(&norms, TuningPolicy::Fixed { c: 4.0 }).unwrap(), 4.0);
        assert!(resolve_tuning(&[0.0, 0.0], TuningPolicy::Median6).is_err());
        assert!(resolve_tuning(&norms, TuningPolicy::Percentile { j: 30 }).is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        let mut all = TuningPolicy::percentile_grid();
        all.push(TuningPolicy::Median6);
        for p in all {
            assert_eq!(TuningPolicy::parse(&p.name()).unwrap(), p);
        }
        assert!(TuningPolicy::parse("p10").is_err());
        assert!(TuningPolicy::parse("nope").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tuning_is_scale_equivariant(
                norms in proptest::collection::vec(0.0f64..100.0, 1..30),
                lambda in 0.01f64..100.0,
                which in 0usize..7,
            ) {
                prop_assume!(norms.iter().any(|&r| r > 0.0));
                let mut policies = TuningPolicy::percentile_grid();
                policies.push(TuningPolicy::Median6);
                let p = policies[which];
                let base = resolve_tuning(&norms, p).unwrap();
                let scaled: Vec<f64> = norms.iter().map(|r| r * lambda).collect();
                let s = resolve_tuning(&scaled, p).unwrap();
                prop_assert!((s - lambda * base).abs() <= 1e-9 * s.abs().max(1.0));
            }
        }
    }
}
