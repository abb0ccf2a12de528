//! Archetypoid analysis: archetypes restricted to actual cases.
//!
//! BUILD takes three initial member sets from a continuous AA fit (nearest
//! case to each archetype, largest mixture weight, largest builder weight).
//! SWAP refines each set by exchanging a member with a non-member whenever
//! that strictly lowers the objective, scanning members in order and
//! candidates by ascending index and taking the first improvement, until a
//! full pass changes nothing. The best refined set wins.

use nalgebra::{DMatrix, DVector};

use crate::archetypes::{self, ArchetypalModel, Engine, FitOptions};
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nnls::{self, SimplexLsProblem};
use crate::robust::{self, LossSpec};

/// The three BUILD initializations, `k` distinct case indices each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSets {
    pub cand_ns: Vec<usize>,
    pub cand_alpha: Vec<usize>,
    pub cand_beta: Vec<usize>,
}

impl CandidateSets {
    pub fn as_array(&self) -> [&[usize]; 3] {
        [&self.cand_ns, &self.cand_alpha, &self.cand_beta]
    }
}

/// Derives the BUILD candidate sets from an AA model fitted on `data`.
pub fn candidate_sets(data: &DataMatrix, aa: &ArchetypalModel) -> Result<CandidateSets> {
    candidate_sets_values(data.values(), aa)
}

pub(crate) fn candidate_sets_values(x: &DMatrix<f64>, aa: &ArchetypalModel) -> Result<CandidateSets> {
    let (n, m) = x.shape();
    let k = aa.k;
    if aa.archetypes.shape() != (k, m) || aa.alpha.shape() != (n, k) || aa.beta.shape() != (k, n) {
        return Err(Error::input("AA model does not match the data shape"));
    }
    if k > n {
        return Err(Error::input("more archetypes than cases"));
    }
    let cand_ns = pick_distinct(k, n, |j, i| (x.row(i) - aa.archetypes.row(j)).norm());
    let cand_alpha = pick_distinct(k, n, |j, i| -aa.alpha[(i, j)]);
    let cand_beta = pick_distinct(k, n, |j, l| -aa.beta[(j, l)]);
    Ok(CandidateSets { cand_ns, cand_alpha, cand_beta })
}

/// For each archetype in turn, the lowest-scoring case not already taken
/// (ties go to the lower index).
fn pick_distinct(k: usize, n: usize, score: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let best = (0..n)
            .filter(|&i| !taken[i])
            .min_by(|&a, &b| score(j, a).total_cmp(&score(j, b)).then(a.cmp(&b)))
            .expect("k <= n leaves a free case");
        taken[best] = true;
        out.push(best);
    }
    out
}

/// Objective of a member set with mixture weights refit for every case,
/// evaluated from the case Gram matrix.
pub(crate) struct SetObjective<'a> {
    gram: &'a DMatrix<f64>,
    penalty: f64,
    loss: LossSpec,
}

impl<'a> SetObjective<'a> {
    pub fn new(gram: &'a DMatrix<f64>, penalty: f64, loss: LossSpec) -> Self {
        SetObjective { gram, penalty, loss }
    }

    pub fn eval(&self, set: &[usize]) -> Result<f64> {
        let n = self.gram.nrows();
        let k = set.len();
        let g = DMatrix::from_fn(k, k, |a, b| self.gram[(set[a], set[b])]);
        let mut member = vec![false; n];
        for &s in set {
            member[s] = true;
        }
        let mut total = 0.0;
        let mut h = DVector::zeros(k);
        for i in (0..n).filter(|&i| !member[i]) {
            for (a, &s) in set.iter().enumerate() {
                h[a] = self.gram[(s, i)];
            }
            let w = nnls::solve_simplex_gram(&g, &h, self.penalty)?.weights;
            let r2 = self.gram[(i, i)] - 2.0 * w.dot(&h) + (&g * &w).dot(&w);
            total += self.loss.eval(r2.max(0.0).sqrt());
        }
        Ok(total)
    }
}

/// First-improvement SWAP from `init`. Returns the refined set and its objective.
pub(crate) fn swap(objective: &SetObjective<'_>, init: &[usize]) -> Result<(Vec<usize>, f64)> {
    let n = objective.gram.nrows();
    let mut set = init.to_vec();
    let mut current = objective.eval(&set)?;
    loop {
        let mut improved = false;
        for j in 0..set.len() {
            for cand in 0..n {
                if set.contains(&cand) {
                    continue;
                }
                let old = set[j];
                set[j] = cand;
                let value = objective.eval(&set)?;
                if value < current - 1e-10 * current.abs() {
                    current = value;
                    improved = true;
                } else {
                    set[j] = old;
                }
            }
        }
        if !improved {
            return Ok((set, current));
        }
    }
}

/// Full record of an archetypoid fit.
#[derive(Debug, Clone)]
pub struct AdaReport {
    pub model: ArchetypalModel,
    pub aa: ArchetypalModel,
    pub candidates: CandidateSets,
    /// Objective of each initial candidate set, in `cand_ns, cand_alpha, cand_beta` order.
    pub initial_objectives: [f64; 3],
    pub refined_sets: [Vec<usize>; 3],
    pub refined_objectives: [f64; 3],
}

/// Fits `k` archetypoids under `loss` (squared or bisquare).
pub fn fit_ada(data: &DataMatrix, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<ArchetypalModel> {
    Ok(fit_ada_detailed(data, k, opts, loss)?.model)
}

/// [`fit_ada`] with the BUILD/SWAP trail.
pub fn fit_ada_detailed(data: &DataMatrix, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<AdaReport> {
    ada_values(data.values(), k, opts, loss)
}

pub(crate) fn ada_values(x: &DMatrix<f64>, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<AdaReport> {
    loss.validate()?;
    archetypes::check_fit_args(x, k, opts)?;
    let aa = build_aa(x, k, opts, loss)?;
    let engine = Engine::new(x, opts.penalty_weight);
    ada_from_aa(&engine, aa, loss)
}

/// The AA fit that seeds BUILD: squared AA for the squared loss, robust AA
/// under the same tuning policy for the bisquare loss.
pub(crate) fn build_aa(x: &DMatrix<f64>, k: usize, opts: &FitOptions, loss: LossSpec) -> Result<ArchetypalModel> {
    if loss.is_robust() {
        Ok(robust::robust_aa_values(
            x,
            k,
            opts,
            LossSpec { resolved_c: None, ..loss },
            robust::TuningSchedule::EveryIteration,
        )?
        .model)
    } else {
        archetypes::fit_aa_values(x, k, opts)
    }
}

/// BUILD/SWAP given an already fitted AA model. A bisquare loss has its
/// constant resolved here from the AA residual norms; when those are all
/// zero the squared loss is used instead.
pub(crate) fn ada_from_aa(engine: &Engine<'_>, aa: ArchetypalModel, loss: LossSpec) -> Result<AdaReport> {
    let x = engine.data();
    let loss = resolve_for_swap(engine, &aa, loss)?;
    let candidates = candidate_sets_values(x, &aa)?;
    let objective = SetObjective::new(engine.gram(), engine.penalty(), loss);

    let mut initial_objectives = [0.0; 3];
    let mut refined_objectives = [0.0; 3];
    let mut refined_sets: [Vec<usize>; 3] = Default::default();
    for (t, init) in candidates.as_array().into_iter().enumerate() {
        initial_objectives[t] = objective.eval(init)?;
        let (set, value) = swap(&objective, init)?;
        refined_sets[t] = set;
        refined_objectives[t] = value;
    }
    let best = (0..3)
        .min_by(|&a, &b| refined_objectives[a].total_cmp(&refined_objectives[b]).then(a.cmp(&b)))
        .expect("three candidates");
    let model = model_for_members(x, &refined_sets[best], engine.penalty(), loss)?;
    Ok(AdaReport { model, aa, candidates, initial_objectives, refined_sets, refined_objectives })
}

fn resolve_for_swap(engine: &Engine<'_>, aa: &ArchetypalModel, loss: LossSpec) -> Result<LossSpec> {
    if !loss.is_robust() {
        return Ok(loss);
    }
    if let Some(c) = loss.resolved_c {
        return Ok(loss.with_c(c));
    }
    let norms = engine.residual_norms_of(aa);
    match robust::resolve_tuning(&norms, loss.policy.expect("validated")) {
        Ok(c) => Ok(loss.with_c(c)),
        Err(Error::Numeric(_)) => Ok(loss),
        Err(e) => Err(e),
    }
}

/// Builds the archetypoid model for a member set, refitting each case's
/// mixture weights against the member rows.
pub fn model_for_members(x: &DMatrix<f64>, members: &[usize], penalty: f64, loss: LossSpec) -> Result<ArchetypalModel> {
    let (n, m) = x.shape();
    let k = members.len();
    let z = DMatrix::from_fn(k, m, |j, c| x[(members[j], c)]);
    let design = z.transpose();
    let mut alpha = DMatrix::zeros(n, k);
    for i in 0..n {
        let problem = SimplexLsProblem::new(design.clone(), x.row(i).transpose(), penalty)?;
        let w = nnls::solve_simplex_ls(&problem)?.weights;
        alpha.row_mut(i).copy_from(&w.transpose());
    }
    let mut beta = DMatrix::zeros(k, n);
    for (j, &s) in members.iter().enumerate() {
        beta[(j, s)] = 1.0;
    }
    let norms = archetypes::row_norms(&(x - &alpha * &z));
    let objective = loss.total(&norms);
    Ok(ArchetypalModel {
        k,
        archetypes: z,
        alpha,
        beta,
        objective,
        loss,
        member_indices: Some(members.to_vec()),
        history: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robust::TuningPolicy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn manual_model(z: DMatrix<f64>, alpha: DMatrix<f64>, beta: DMatrix<f64>) -> ArchetypalModel {
        ArchetypalModel {
            k: z.nrows(),
            archetypes: z,
            alpha,
            beta,
            objective: 0.0,
            loss: LossSpec::squared(),
            member_indices: None,
            history: vec![],
        }
    }

    #[test]
    fn nearest_rows_when_archetypes_are_rows() {
        let d =
            DataMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 1.0], vec![1.0, 5.0], vec![2.0, 2.0], vec![9.0, 9.0]])
                .unwrap();
        let z = DMatrix::from_row_slice(3, 2, &[9.0, 9.0, 5.0, 1.0, 1.0, 5.0]);
        let alpha = DMatrix::from_element(5, 3, 1.0 / 3.0);
        let beta = DMatrix::from_element(3, 5, 0.2);
        let c = candidate_sets(&d, &manual_model(z, alpha, beta)).unwrap();
        assert_eq!(c.cand_ns, vec![4, 1, 2]);
    }

    #[test]
    fn beta_indicator_selects_case() {
        let d = DataMatrix::from_values(DMatrix::from_fn(7, 2, |i, j| (i * 2 + j) as f64)).unwrap();
        let mut beta = DMatrix::zeros(1, 7);
        beta[(0, 5)] = 1.0;
        let z = d.values().rows(5, 1).into_owned();
        let c = candidate_sets(&d, &manual_model(z, DMatrix::from_element(7, 1, 1.0), beta)).unwrap();
        assert_eq!(c.cand_beta, vec![5]);
    }

    #[test]
    fn tie_breaks_to_lower_index() {
        let d = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let z = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let alpha = DMatrix::from_column_slice(2, 1, &[0.4, 0.6]);
        let beta = DMatrix::from_row_slice(1, 2, &[0.5, 0.5]);
        let c = candidate_sets(&d, &manual_model(z, alpha, beta)).unwrap();
        assert_eq!(c.cand_ns, vec![0]);
        assert_eq!(c.cand_alpha, vec![1]);
        assert_eq!(c.cand_beta, vec![0]);
    }

    #[test]
    fn duplicates_resolved_by_next_best() {
        let d = DataMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let z = DMatrix::from_row_slice(2, 1, &[0.1, 0.2]);
        let alpha = DMatrix::from_row_slice(3, 2, &[0.9, 0.1, 0.5, 0.5, 0.2, 0.8]);
        let beta = DMatrix::from_row_slice(2, 3, &[0.9, 0.1, 0.0, 0.8, 0.2, 0.0]);
        let c = candidate_sets(&d, &manual_model(z, alpha, beta)).unwrap();
        assert_eq!(c.cand_ns, vec![0, 1]);
        assert_eq!(c.cand_beta, vec![0, 1]);
        assert_eq!(c.cand_alpha, vec![0, 2]);
    }

    #[test]
    fn single_archetypoid_is_the_medoid() {
        let d = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![10.0, 0.0]]).unwrap();
        let m = fit_ada(&d, 1, &FitOptions::default(), LossSpec::squared()).unwrap();
        assert_eq!(m.member_indices, Some(vec![1]));
        // Brute force over the three candidates.
        let x = d.values();
        let costs: Vec<f64> = (0..3).map(|c| (0..3).map(|i| (x.row(i) - x.row(c)).norm_squared()).sum()).collect();
        assert_eq!(costs, vec![101.0, 82.0, 181.0]);
        assert_eq!(m.objective, 82.0);
    }

    #[test]
    fn convex_position_points_all_selected() {
        let d = DataMatrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 0.0], vec![3.0, 2.0], vec![0.0, 2.0]]).unwrap();
        let m = fit_ada(&d, 4, &FitOptions::default(), LossSpec::squared()).unwrap();
        let mut mem = m.member_indices.clone().unwrap();
        mem.sort();
        assert_eq!(mem, vec![0, 1, 2, 3]);
        assert!(m.objective < 1e-12);
    }

    fn exhaustive_pair_optimum(x: &DMatrix<f64>) -> f64 {
        // Independent route: closed-form projection onto each member segment.
        let n = x.nrows();
        let mut best = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let d = x.row(a) - x.row(b);
                let dd = d.norm_squared();
                let mut rss = 0.0;
                for i in 0..n {
                    let p = x.row(i) - x.row(b);
                    let t = if dd > 0.0 { (p.dot(&d) / dd).clamp(0.0, 1.0) } else { 0.0 };
                    rss += (p - &d * t).norm_squared();
                }
                best = best.min(rss);
            }
        }
        best
    }

    #[test]
    fn matches_enumeration_on_eight_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let d = DataMatrix::from_values(x.clone()).unwrap();
        let m = fit_ada(&d, 2, &FitOptions::default(), LossSpec::squared()).unwrap();
        let best = exhaustive_pair_optimum(&x);
        assert!((m.objective - best).abs() <= 1e-8 * best.max(1.0), "{} vs {}", m.objective, best);
    }

    #[test]
    fn swap_never_worse_than_initial_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut agree = 0;
        let trials = 30;
        for t in 0..trials {
            let n = rng.random_range(6..12);
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-2.0..2.0));
            let d = DataMatrix::from_values(x).unwrap();
            let k = 1 + t % 3;
            let opts = FitOptions { restarts: 3, ..FitOptions::default().with_seed(t as u64) };
            let r = fit_ada_detailed(&d, k, &opts, LossSpec::squared()).unwrap();
            for s in 0..3 {
                assert!(r.refined_objectives[s] <= r.initial_objectives[s] + 1e-12);
                assert!(r.model.objective <= r.initial_objectives[s] + 1e-8 * r.initial_objectives[s].max(1.0));
            }
            let mut sets: Vec<Vec<usize>> = r.refined_sets.to_vec();
            sets.iter_mut().for_each(|s| s.sort());
            if sets[0] == sets[1] && sets[1] == sets[2] {
                agree += 1;
            }
            // Archetypoid rows are bit-identical copies of data rows.
            let mem = r.model.member_indices.as_ref().unwrap();
            for (j, &s) in mem.iter().enumerate() {
                assert_eq!(r.model.archetypes.row(j), d.values().row(s));
                assert_eq!(r.model.beta.row(j).sum(), 1.0);
                assert_eq!(r.model.beta[(j, s)], 1.0);
            }
        }
        assert!(agree * 2 >= trials, "only {agree}/{trials} agreed");
    }

    #[test]
    fn robust_ada_with_all_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let d = DataMatrix::from_values(x).unwrap();
        let m =
            robust::fit_robust_ada(&d, 5, &FitOptions::default(), LossSpec::bisquare(TuningPolicy::Median6)).unwrap();
        assert_eq!(m.member_indices.as_ref().unwrap().len(), 5);
        assert!(m.objective < 1e-12);
    }
}
