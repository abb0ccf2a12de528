//! Archetypal analysis by alternating minimization.
//!
//! Each case `x_i` is approximated by a convex mixture `sum_j alpha_ij z_j`
//! of `k` archetypes, and each archetype is itself a convex mixture
//! `z_j = sum_l beta_jl x_l` of cases. The fit alternates between
//!
//! * the mixture step: one simplex least-squares problem per case against
//!   the current archetypes, and
//! * the archetype step: archetypes are updated one at a time, each being
//!   the exact minimizer of the (case-weighted) residual sum of squares with
//!   the other archetypes held fixed.
//!
//! Both steps solve their subproblem exactly, so the objective never
//! increases across iterations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::nnls::{self, DEFAULT_PENALTY};
use crate::robust::LossSpec;

/// Restart and convergence settings shared by all fitters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub penalty_weight: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { restarts: 10, max_iters: 100, rel_tol: 1e-6, seed: 0, penalty_weight: DEFAULT_PENALTY }
    }
}

impl FitOptions {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::input("restarts must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::input("max_iters must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::input("rel_tol must be positive"));
        }
        if !(self.penalty_weight > 0.0) {
            return Err(Error::input("penalty_weight must be positive"));
        }
        Ok(())
    }
}

/// A fitted archetype or archetypoid model.
#[derive(Debug, Clone)]
pub struct ArchetypalModel {
    pub k: usize,
    /// `k x m`, one archetype per row.
    pub archetypes: DMatrix<f64>,
    /// `n x k` mixture weights.
    pub alpha: DMatrix<f64>,
    /// `k x n` builder weights.
    pub beta: DMatrix<f64>,
    pub objective: f64,
    pub loss: LossSpec,
    /// Case indices of the archetypoids; `None` for continuous archetypes.
    pub member_indices: Option<Vec<usize>>,
    /// Objective after each iteration of the winning restart.
    pub history: Vec<f64>,
}

impl ArchetypalModel {
    /// `alpha * Z`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.alpha * &self.archetypes
    }

    /// Euclidean norm of each case's residual.
    pub fn residual_norms(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        Ok(row_norms(&(x - self.reconstruction())))
    }

    fn check_shape(&self, x: &DMatrix<f64>) -> Result<()> {
        let (n, m) = x.shape();
        if self.alpha.nrows() != n || self.alpha.ncols() != self.k || self.archetypes.shape() != (self.k, m) {
            return Err(Error::input(format!(
                "model (alpha {:?}, archetypes {:?}) does not fit data {n}x{m}",
                self.alpha.shape(),
                self.archetypes.shape()
            )));
        }
        Ok(())
    }
}

pub(crate) fn row_norms(r: &DMatrix<f64>) -> Vec<f64> {
    (0..r.nrows()).map(|i| r.row(i).norm()).collect()
}

/// `sum_i ||x_i - sum_j alpha_ij z_j||^2`.
pub fn compute_rss(data: &DataMatrix, model: &ArchetypalModel) -> Result<f64> {
    let norms = model.residual_norms(data.values())?;
    Ok(norms.iter().map(|r| r * r).sum())
}

/// Mutable fit state: mixture weights, builder weights and archetypes.
#[derive(Debug, Clone)]
pub(crate) struct State {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Data-bound workspace holding the case Gram matrix `X X'`.
pub(crate) struct Engine<'a> {
    x: &'a DMatrix<f64>,
    gram: DMatrix<f64>,
    penalty: f64,
}

impl<'a> Engine<'a> {
    pub fn new(x: &'a DMatrix<f64>, penalty: f64) -> Self {
        let gram = x * x.transpose();
        Engine { x, gram, penalty }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        self.x
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn state_from_beta(&self, beta: DMatrix<f64>) -> Result<State> {
        let z = &beta * self.x;
        let alpha = self.alpha_step(&z)?;
        Ok(State { alpha, beta, z })
    }

    /// Best mixture weights of every case against archetypes `z`.
    pub fn alpha_step(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let k = z.nrows();
        let n = self.x.nrows();
        let g = z * z.transpose();
        let h = z * self.x.transpose();
        let mut alpha = DMatrix::zeros(n, k);
        for i in 0..n {
            let sol = nnls::solve_simplex_gram(&g, &h.column(i).into_owned(), self.penalty)?;
            alpha.row_mut(i).copy_from(&sol.weights.transpose());
        }
        Ok(alpha)
    }

    /// Updates archetypes one at a time. With case weights `w`, archetype `j`
    /// minimizes `sum_i w_i ||x_i - sum_l alpha_il z_l||^2` with the others fixed.
    pub fn beta_step(&self, state: &mut State, weights: Option<&[f64]>) -> Result<()> {
        let k = state.z.nrows();
        let n = self.x.nrows();
        for j in 0..k {
            let wa = DVector::from_fn(n, |i, _| weights.map_or(1.0, |w| w[i]) * state.alpha[(i, j)]);
            let denom: f64 = (0..n).map(|i| wa[i] * state.alpha[(i, j)]).sum();
            if denom <= 1e-300 {
                continue;
            }
            // v = (X' wa - sum_{l != j} <alpha_l, wa> z_l) / denom
            let mut v = self.x.tr_mul(&wa);
            for l in 0..k {
                if l != j {
                    let c = state.alpha.column(l).dot(&wa);
                    v -= state.z.row(l).transpose() * c;
                }
            }
            v /= denom;
            let rhs = self.x * &v;
            let sol = nnls::solve_simplex_gram(&self.gram, &rhs, self.penalty)?;
            state.beta.row_mut(j).copy_from(&sol.weights.transpose());
            let zj = self.x.tr_mul(&sol.weights);
            state.z.row_mut(j).copy_from(&zj.transpose());
        }
        Ok(())
    }

    /// One archetype step followed by one mixture step.
    pub fn weighted_pass(&self, state: &mut State, weights: Option<&[f64]>) -> Result<()> {
        self.beta_step(state, weights)?;
        state.alpha = self.alpha_step(&state.z)?;
        Ok(())
    }

    pub fn residual_norms(&self, state: &State) -> Vec<f64> {
        row_norms(&(self.x - &state.alpha * &state.z))
    }

    pub fn residual_norms_of(&self, model: &ArchetypalModel) -> Vec<f64> {
        row_norms(&(self.x - model.reconstruction()))
    }

    pub fn finish(&self, state: State, objective: f64, loss: LossSpec, history: Vec<f64>) -> ArchetypalModel {
        ArchetypalModel {
            k: state.z.nrows(),
            archetypes: state.z,
            alpha: state.alpha,
            beta: state.beta,
            objective,
            loss,
            member_indices: None,
            history,
        }
    }

    /// Squared-loss alternating iterations from an initial `beta`.
    pub fn run_squared(&self, beta: DMatrix<f64>, opts: &FitOptions) -> Result<ArchetypalModel> {
        let mut state = self.state_from_beta(beta)?;
        let mut obj = sum_sq(&self.residual_norms(&state));
        let mut history = vec![obj];
        for _ in 0..opts.max_iters {
            if obj == 0.0 {
                break;
            }
            self.weighted_pass(&mut state, None)?;
            let next = sum_sq(&self.residual_norms(&state));
            history.push(next);
            let rel = (obj - next) / obj;
            obj = next;
            if rel < opts.rel_tol {
                break;
            }
        }
        Ok(self.finish(state, obj, LossSpec::squared(), history))
    }
}

fn sum_sq(norms: &[f64]) -> f64 {
    norms.iter().map(|r| r * r).sum()
}

pub(crate) fn restart_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k x n` matrix whose rows are flat-Dirichlet draws over the cases.
pub(crate) fn dirichlet_beta(k: usize, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut beta = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(Exp1));
    for mut row in beta.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    beta
}

pub(crate) fn check_fit_args(x: &DMatrix<f64>, k: usize, opts: &FitOptions) -> Result<()> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if k > x.nrows() {
        return Err(Error::input(format!("k = {k} exceeds the number of cases {}", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("data contain non-finite values"));
    }
    Ok(())
}

/// Runs one closure per restart (in parallel) and collects results in
/// restart order.
pub(crate) fn run_restarts<T, F>(opts: &FitOptions, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    (0..opts.restarts).into_par_iter().map(&f).collect()
}

fn pick_best(models: Vec<ArchetypalModel>) -> ArchetypalModel {
    // First minimum wins, keeping the choice independent of scheduling.
    let mut best: Option<ArchetypalModel> = None;
    for m in models {
        if best.as_ref().is_none_or(|b| m.objective < b.objective) {
            best = Some(m);
        }
    }
    best.expect("at least one restart")
}

/// Fits `k` archetypes by minimizing the residual sum of squares.
pub fn fit_aa(data: &DataMatrix, k: usize, opts: &FitOptions) -> Result<ArchetypalModel> {
    fit_aa_values(data.values(), k, opts)
}

pub(crate) fn fit_aa_values(x: &DMatrix<f64>, k: usize, opts: &FitOptions) -> Result<ArchetypalModel> {
    check_fit_args(x, k, opts)?;
    let engine = Engine::new(x, opts.penalty_weight);
    let models = run_restarts(opts, |restart| {
        let mut rng = restart_rng(opts.seed, restart as u64);
        engine.run_squared(dirichlet_beta(k, x.nrows(), &mut rng), opts)
    })?;
    Ok(pick_best(models))
}

/// Objective-versus-k curve.
#[derive(Debug, Clone)]
pub struct ElbowCurve {
    pub points: Vec<(usize, f64)>,
    /// Interior `k` with the largest second difference, when there is one.
    pub suggested_k: Option<usize>,
}

impl ElbowCurve {
    fn new(points: Vec<(usize, f64)>) -> Self {
        let suggested_k = points
            .windows(3)
            .map(|w| (w[1].0, w[0].1 - 2.0 * w[1].1 + w[2].1))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k);
        ElbowCurve { points, suggested_k }
    }
}

/// Fits AA for each `k` in `k_min..=k_max`. From the second `k` on, one
/// restart is seeded with the previous solution plus one random case.
pub fn elbow_scan(data: &DataMatrix, k_min: usize, k_max: usize, opts: &FitOptions) -> Result<ElbowCurve> {
    let x = data.values();
    if k_min == 0 || k_min > k_max {
        return Err(Error::input(format!("invalid k range {k_min}..={k_max}")));
    }
    check_fit_args(x, k_max, opts)?;
    let engine = Engine::new(x, opts.penalty_weight);
    let n = x.nrows();
    let mut points = Vec::new();
    let mut prev: Option<ArchetypalModel> = None;
    for k in k_min..=k_max {
        let stream_base = (k as u64) << 32;
        let mut models = run_restarts(opts, |restart| {
            let mut rng = restart_rng(opts.seed, stream_base + restart as u64);
            engine.run_squared(dirichlet_beta(k, n, &mut rng), opts)
        })?;
        if let Some(p) = &prev {
            let mut rng = restart_rng(opts.seed, stream_base + u32::MAX as u64);
            let mut beta = p.beta.clone().insert_row(p.k, 0.0);
            beta[(p.k, rng.random_range(0..n))] = 1.0;
            models.push(engine.run_squared(beta, opts)?);
        }
        let best = pick_best(models);
        points.push((k, best.objective));
        prev = Some(best);
    }
    Ok(ElbowCurve::new(points))
}

/// Frobenius distance between two archetype sets after matching their rows
/// by a minimum-cost assignment on pairwise Euclidean distances.
pub fn model_distance(a: &ArchetypalModel, b: &ArchetypalModel) -> Result<f64> {
    archetype_set_distance(&a.archetypes, &b.archetypes)
}

pub fn archetype_set_distance(za: &DMatrix<f64>, zb: &DMatrix<f64>) -> Result<f64> {
    if za.shape() != zb.shape() {
        return Err(Error::input(format!("archetype sets differ in shape: {:?} vs {:?}", za.shape(), zb.shape())));
    }
    let k = za.nrows();
    let cost = DMatrix::from_fn(k, k, |i, j| (za.row(i) - zb.row(j)).norm());
    let assign = min_cost_assignment(&cost);
    let sq: f64 = (0..k).map(|i| (za.row(i) - zb.row(assign[i])).norm_squared()).sum();
    Ok(sq.sqrt())
}

/// Hungarian method on a square cost matrix; returns the column assigned to
/// each row.
pub(crate) fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn square() -> DataMatrix {
        DataMatrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap()
    }

    fn random_model(n: usize, m: usize, k: usize, rng: &mut impl Rng) -> (DataMatrix, ArchetypalModel) {
        let x = DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..2.0));
        let beta = dirichlet_beta(k, n, rng);
        let alpha = dirichlet_beta(n, k, rng);
        let z = &beta * &x;
        let model = ArchetypalModel {
            k,
            archetypes: z,
            alpha,
            beta,
            objective: 0.0,
            loss: LossSpec::squared(),
            member_indices: None,
            history: vec![],
        };
        (DataMatrix::from_values(x).unwrap(), model)
    }

    #[test]
    fn single_archetype_is_the_mean() {
        let m = fit_aa(&square(), 1, &FitOptions::default()).unwrap();
        assert!((m.archetypes[(0, 0)] - 1.0).abs() < 1e-8);
        assert!((m.archetypes[(0, 1)] - 1.0).abs() < 1e-8);
        assert!((m.objective - 8.0).abs() < 1e-8);
    }

    #[test]
    fn vertices_reproduce_exactly() {
        let d = DataMatrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let m = fit_aa(&d, 3, &FitOptions::default()).unwrap();
        assert!(m.objective < 1e-12, "rss {}", m.objective);
        // Every archetype coincides with one row.
        for j in 0..3 {
            let best = (0..3).map(|i| (m.archetypes.row(j) - d.values().row(i)).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6);
        }
    }

    #[test]
    fn rss_examples() {
        let d = DataMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let model = ArchetypalModel {
            k: 1,
            archetypes: DMatrix::zeros(1, 2),
            alpha: DMatrix::from_element(1, 1, 1.0),
            beta: DMatrix::from_element(1, 1, 1.0),
            objective: 0.0,
            loss: LossSpec::squared(),
            member_indices: None,
            history: vec![],
        };
        assert_eq!(compute_rss(&d, &model).unwrap(), 1.0);

        let mut perfect = model.clone();
        perfect.archetypes = d.values().clone();
        assert_eq!(compute_rss(&d, &perfect).unwrap(), 0.0);
    }

    #[test]
    fn rss_matches_naive_loops() {
        let mut rng = restart_rng(17, 0);
        for _ in 0..20 {
            let (d, model) = random_model(5, 3, 2, &mut rng);
            let x = d.values();
            let mut naive = 0.0;
            for i in 0..5 {
                for c in 0..3 {
                    let mut fit = 0.0;
                    for j in 0..2 {
                        let mut zj = 0.0;
                        for l in 0..5 {
                            zj += model.beta[(j, l)] * x[(l, c)];
                        }
                        fit += model.alpha[(i, j)] * zj;
                    }
                    naive += (x[(i, c)] - fit).powi(2);
                }
            }
            assert!((compute_rss(&d, &model).unwrap() - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn rss_shape_mismatch() {
        let mut rng = restart_rng(1, 0);
        let (_, model) = random_model(5, 3, 2, &mut rng);
        let other = DataMatrix::from_values(DMatrix::zeros(4, 3)).unwrap();
        assert!(compute_rss(&other, &model).is_err());
    }

    #[test]
    fn invalid_k() {
        assert!(fit_aa(&square(), 5, &FitOptions::default()).is_err());
        assert!(fit_aa(&square(), 0, &FitOptions::default()).is_err());
    }

    #[test]
    fn objective_monotone_and_constraints_hold() {
        let mut rng = restart_rng(3, 0);
        let x = DMatrix::from_fn(40, 4, |_, _| rng.random_range(-1.0..1.0));
        let d = DataMatrix::from_values(x).unwrap();
        for k in 1..=4 {
            let m = fit_aa(&d, k, &FitOptions { restarts: 3, ..Default::default() }).unwrap();
            for w in m.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-10 * w[0].max(1.0), "{} -> {}", w[0], w[1]);
            }
            for i in 0..40 {
                let row = m.alpha.row(i);
                assert!(row.iter().all(|&a| a >= 0.0));
                assert!((row.sum() - 1.0).abs() <= 1e-6);
            }
            for j in 0..k {
                let row = m.beta.row(j);
                assert!(row.iter().all(|&b| b >= 0.0));
                assert!((row.sum() - 1.0).abs() <= 1e-6);
            }
            let z = &m.beta * d.values();
            assert!((z - &m.archetypes).amax() <= 1e-8);
            assert!((compute_rss(&d, &m).unwrap() - m.objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn mean_for_any_dataset() {
        let mut rng = restart_rng(8, 0);
        for _ in 0..5 {
            let n = rng.random_range(2..30);
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-10.0..10.0));
            let mean = x.row_mean();
            let m = fit_aa(&DataMatrix::from_values(x).unwrap(), 1, &FitOptions::default()).unwrap();
            assert!((m.archetypes.row(0) - mean).amax() < 1e-8);
        }
    }

    #[test]
    fn elbow_on_hull_vertices() {
        // Three vertices plus interior points.
        let d = DataMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![4.0, 0.0],
            vec![0.0, 4.0],
            vec![1.0, 1.0],
            vec![2.0, 1.0],
            vec![1.0, 2.0],
        ])
        .unwrap();
        let curve = elbow_scan(&d, 1, 3, &FitOptions::default()).unwrap();
        assert_eq!(curve.points.len(), 3);
        assert!(curve.points[2].1 < 1e-10);
        for w in curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-6);
        }
        let single = elbow_scan(&d, 1, 1, &FitOptions::default()).unwrap();
        let x = d.values();
        let mean = x.row_mean();
        let tss: f64 = (0..x.nrows()).map(|i| (x.row(i) - &mean).norm_squared()).sum();
        assert!((single.points[0].1 - tss).abs() < 1e-8);
        assert_eq!(single.suggested_k, None);
    }

    #[test]
    fn distance_examples() {
        let mut rng = restart_rng(2, 0);
        let (_, a) = random_model(6, 3, 4, &mut rng);
        assert_eq!(model_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.archetypes = DMatrix::from_fn(4, 3, |i, j| a.archetypes[((i + 2) % 4, j)]);
        assert!(model_distance(&a, &b).unwrap() < 1e-12);

        let za = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let zb = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!((archetype_set_distance(&za, &zb).unwrap() - 5.0).abs() < 1e-12);
        assert!(archetype_set_distance(&za, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force() {
        fn perms(k: usize) -> Vec<Vec<usize>> {
            if k == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in perms(k - 1) {
                for pos in 0..k {
                    let mut q = p.clone();
                    q.insert(pos, k - 1);
                    out.push(q);
                }
            }
            out
        }
        let mut rng = restart_rng(4, 0);
        for k in 1..=6 {
            for _ in 0..20 {
                let cost = DMatrix::from_fn(k, k, |_, _| rng.random_range(0.0..10.0));
                let a = min_cost_assignment(&cost);
                let got: f64 = (0..k).map(|i| cost[(i, a[i])]).sum();
                let best =
                    perms(k).iter().map(|p| (0..k).map(|i| cost[(i, p[i])]).sum::<f64>()).fold(f64::INFINITY, f64::min);
                assert!((got - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_archetypes_near_brute_force_optimum() {
        // Brute force over beta rows on a 0.05 simplex grid for small n.
        fn grid(n: usize, steps: usize) -> Vec<Vec<f64>> {
            fn rec(n: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
                if cur.len() == n - 1 {
                    cur.push(left as f64 / steps as f64);
                    out.push(cur.clone());
                    cur.pop();
                    return;
                }
                for s in 0..=left {
                    cur.push(s as f64 / steps as f64);
                    rec(n, left - s, steps, cur, out);
                    cur.pop();
                }
            }
            let mut out = Vec::new();
            rec(n, steps, steps, &mut Vec::new(), &mut out);
            out
        }
        let mut rng = restart_rng(12, 0);
        for trial in 0..4 {
            let n = 4 + trial % 2;
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let g = grid(n, 20);
            let zs: Vec<[f64; 2]> = g
                .iter()
                .map(|b| {
                    let z = x.tr_mul(&DVector::from_column_slice(b));
                    [z[0], z[1]]
                })
                .collect();
            // Closed-form projection of each case onto the segment [z_a, z_b].
            let seg_rss = |za: &[f64; 2], zb: &[f64; 2]| -> f64 {
                let d = [za[0] - zb[0], za[1] - zb[1]];
                let dd = d[0] * d[0] + d[1] * d[1];
                (0..n)
                    .map(|i| {
                        let p = [x[(i, 0)] - zb[0], x[(i, 1)] - zb[1]];
                        let t = if dd > 0.0 { ((p[0] * d[0] + p[1] * d[1]) / dd).clamp(0.0, 1.0) } else { 0.0 };
                        (p[0] - t * d[0]).powi(2) + (p[1] - t * d[1]).powi(2)
                    })
                    .sum()
            };
            let mut best = f64::INFINITY;
            for a in 0..zs.len() {
                for b in a + 1..zs.len() {
                    best = best.min(seg_rss(&zs[a], &zs[b]));
                }
            }
            let d = DataMatrix::from_values(x.clone()).unwrap();
            let m = fit_aa(&d, 2, &FitOptions::default()).unwrap();
            assert!(m.objective <= best * 1.01 + 1e-12, "fit {} vs grid {}", m.objective, best);
        }
    }
}
