//! Non-negative least squares on the probability simplex.
//!
//! Both the mixture step and the archetype step of archetypal analysis reduce
//! to problems of the form `min ||A w - b||` subject to `w >= 0` and
//! `sum(w) = 1`. The sum constraint is folded into the design as one extra
//! row holding `penalty_weight` in every column (and `penalty_weight` in the
//! target), and the resulting non-negative problem is solved with the
//! Lawson–Hanson active-set method.
//!
//! A single penalized solve leaves `sum(w)` short of one by roughly
//! `|a_j' r| / penalty^2`. The target entry of the penalty row is therefore
//! shifted by the remaining defect and the solve repeated (a multiplier
//! update), which drives the defect to rounding level in a handful of sweeps.
//!
//! The active-set iterations run on the normal equations (`A'A`, `A'b`). Hot
//! paths in the fitters already hold the Gram matrix of the data, so they
//! call [`solve_simplex_gram`] directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default weight of the sum-to-one penalty row.
pub const DEFAULT_PENALTY: f64 = 200.0;

const MAX_MULTIPLIER_SWEEPS: usize = 60;
const SUM_TOLERANCE: f64 = 1e-13;

/// A sum-to-one constrained non-negative least-squares problem.
#[derive(Debug, Clone)]
pub struct SimplexLsProblem {
    design: DMatrix<f64>,
    target: DVector<f64>,
    penalty_weight: f64,
}

impl SimplexLsProblem {
    /// `design` holds one candidate atom per column.
    pub fn new(design: DMatrix<f64>, target: DVector<f64>, penalty_weight: f64) -> Result<Self> {
        if design.ncols() == 0 {
            return Err(Error::input("design needs at least one column"));
        }
        if design.nrows() != target.len() {
            return Err(Error::input(format!(
                "design has {} rows but target has length {}",
                design.nrows(),
                target.len()
            )));
        }
        if !(penalty_weight > 0.0) || !penalty_weight.is_finite() {
            return Err(Error::input("penalty weight must be positive and finite"));
        }
        if design.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("design and target must be finite"));
        }
        Ok(SimplexLsProblem { design, target, penalty_weight })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn penalty_weight(&self) -> f64 {
        self.penalty_weight
    }

    fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.design.tr_mul(&self.design), self.design.tr_mul(&self.target))
    }

    /// Squared residual `||A w - b||^2` without the penalty row.
    pub fn residual_sq(&self, weights: &DVector<f64>) -> f64 {
        (&self.design * weights - &self.target).norm_squared()
    }
}

/// Solution of a simplex least-squares problem.
#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub weights: DVector<f64>,
    /// Active-set iterations summed over all sweeps.
    pub iterations: usize,
    /// Set when the design is identically zero and uniform weights were returned.
    pub degenerate: bool,
}

/// Solves `min ||A w - b||^2` over the probability simplex.
pub fn solve_simplex_ls(problem: &SimplexLsProblem) -> Result<SimplexSolution> {
    let (gram, rhs) = problem.normal_equations();
    solve_simplex_gram(&gram, &rhs, problem.penalty_weight)
}

/// One penalized Lawson–Hanson solve with no multiplier refinement and no
/// renormalization. The result is non-negative but only approximately sums
/// to one; the defect shrinks as the penalty grows.
pub fn solve_penalized_nnls(problem: &SimplexLsProblem) -> Result<SimplexSolution> {
    let (gram, rhs) = problem.normal_equations();
    let k = gram.nrows();
    let Some(scale) = gram_scale(&gram) else {
        return Ok(uniform(k));
    };
    let pen2 = problem.penalty_weight * problem.penalty_weight;
    let g = penalized_gram(&gram, scale, pen2);
    let h = penalized_rhs(&rhs, scale, pen2, 1.0);
    let (weights, iterations) = nnls_normal(&g, &h, iteration_cap(k))?;
    Ok(SimplexSolution { weights, iterations, degenerate: false })
}

/// Gram-form entry point: `gram = A'A`, `rhs = A'b`.
pub fn solve_simplex_gram(gram: &DMatrix<f64>, rhs: &DVector<f64>, penalty_weight: f64) -> Result<SimplexSolution> {
    let k = gram.nrows();
    debug_assert_eq!(gram.ncols(), k);
    debug_assert_eq!(rhs.len(), k);
    if k == 1 {
        return Ok(SimplexSolution { weights: DVector::from_element(1, 1.0), iterations: 0, degenerate: false });
    }
    let Some(scale) = gram_scale(gram) else {
        log::warn!("all-zero design in simplex least squares; returning uniform weights");
        return Ok(uniform(k));
    };
    let pen2 = penalty_weight * penalty_weight;
    let g = penalized_gram(gram, scale, pen2);
    let cap = iteration_cap(k);

    let mut shift = 1.0;
    let mut total_iters = 0;
    let mut weights = DVector::zeros(k);
    for _ in 0..MAX_MULTIPLIER_SWEEPS {
        let h = penalized_rhs(rhs, scale, pen2, shift);
        let (w, it) = nnls_normal(&g, &h, cap)?;
        total_iters += it;
        weights = w;
        let defect = 1.0 - weights.sum();
        if defect.abs() <= SUM_TOLERANCE {
            break;
        }
        shift += defect;
    }
    let sum = weights.sum();
    if !(sum > 0.0) {
        return Err(Error::Numeric("simplex solve returned all-zero weights".into()));
    }
    weights /= sum;
    Ok(SimplexSolution { weights, iterations: total_iters, degenerate: false })
}

fn uniform(k: usize) -> SimplexSolution {
    SimplexSolution { weights: DVector::from_element(k, 1.0 / k as f64), iterations: 0, degenerate: true }
}

fn iteration_cap(k: usize) -> usize {
    3 * k + 30
}

/// Largest squared column norm, used to make the penalty dimensionless.
fn gram_scale(gram: &DMatrix<f64>) -> Option<f64> {
    let s = gram.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    (s > 0.0 && s.is_finite()).then_some(s)
}

fn penalized_gram(gram: &DMatrix<f64>, scale: f64, pen2: f64) -> DMatrix<f64> {
    gram.map(|v| v / scale + pen2)
}

fn penalized_rhs(rhs: &DVector<f64>, scale: f64, pen2: f64, shift: f64) -> DVector<f64> {
    rhs.map(|v| v / scale + pen2 * shift)
}

/// Lawson–Hanson active-set NNLS on the normal equations `G x = h`.
/// Returns the solution and the number of outer iterations.
fn nnls_normal(g: &DMatrix<f64>, h: &DVector<f64>, max_iter: usize) -> Result<(DVector<f64>, usize)> {
    let k = h.len();
    let mag = h.amax().max(g.diagonal().amax()).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * mag;

    let mut x = DVector::<f64>::zeros(k);
    let mut passive = vec![false; k];
    let mut dual = h.clone();
    // Entering indices whose own coordinate came back non-positive; they
    // are skipped until x changes, which breaks the add/drop cycle that
    // roundoff causes on degenerate problems.
    let mut rejected = vec![false; k];
    let mut iters = 0;

    loop {
        let next = (0..k)
            .filter(|&j| !passive[j] && !rejected[j] && dual[j] > tol)
            .max_by(|&a, &b| dual[a].total_cmp(&dual[b]));
        let Some(j) = next else { break };
        iters += 1;
        if iters > max_iter {
            return Err(Error::NoConvergence { iterations: iters - 1 });
        }
        passive[j] = true;

        let mut inner = 0;
        loop {
            inner += 1;
            if inner > max_iter {
                return Err(Error::NoConvergence { iterations: iters });
            }
            let idx: Vec<usize> = (0..k).filter(|&i| passive[i]).collect();
            let s = solve_subsystem(g, h, &idx)?;
            if inner == 1 && s[idx.iter().position(|&i| i == j).expect("entering index is passive")] <= 0.0 {
                passive[j] = false;
                rejected[j] = true;
                break;
            }
            if s.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (p, &i) in idx.iter().enumerate() {
                    x[i] = s[p];
                }
                break;
            }
            // Step towards s until the first passive coordinate hits zero.
            let mut step = f64::INFINITY;
            for (p, &i) in idx.iter().enumerate() {
                if s[p] <= 0.0 {
                    let denom = x[i] - s[p];
                    if denom > 0.0 {
                        step = step.min(x[i] / denom);
                    }
                }
            }
            if !step.is_finite() {
                step = 0.0;
            }
            for (p, &i) in idx.iter().enumerate() {
                x[i] += step * (s[p] - x[i]);
            }
            let mut moved = false;
            let zero = 4.0 * f64::EPSILON * x.amax().max(1.0);
            for &i in &idx {
                if x[i] <= zero {
                    x[i] = 0.0;
                    passive[i] = false;
                    moved = true;
                }
            }
            if !moved {
                // Guard against a stalled step: drop the most negative coordinate.
                let (p, _) = s.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty passive set");
                x[idx[p]] = 0.0;
                passive[idx[p]] = false;
            }
        }
        if !rejected[j] {
            rejected.fill(false);
        }
        dual = h - g * &x;
    }
    Ok((x, iters))
}

fn solve_subsystem(g: &DMatrix<f64>, h: &DVector<f64>, idx: &[usize]) -> Result<DVector<f64>> {
    let p = idx.len();
    let sub = DMatrix::from_fn(p, p, |a, b| g[(idx[a], idx[b])]);
    let rhs = DVector::from_fn(p, |a, _| h[idx[a]]);
    if let Some(ch) = sub.clone().cholesky() {
        return Ok(ch.solve(&rhs));
    }
    let svd = sub.svd(true, true);
    let eps = 1e-13 * svd.singular_values.max();
    svd.solve(&rhs, eps).map_err(|e| Error::Numeric(format!("passive-set solve failed: {e}")))
}
