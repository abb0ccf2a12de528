//! Best convex combination of a few atoms for a target point.

use archetypal::nnls::{solve_simplex_ls, SimplexLsProblem, DEFAULT_PENALTY};
use nalgebra::{DMatrix, DVector};

fn main() -> archetypal::Result<()> {
    // Atoms are the columns: the corners of a triangle.
    let design = DMatrix::from_column_slice(2, 3, &[0.0, 0.0, 4.0, 0.0, 0.0, 3.0]);
    for target in [[1.0, 1.0], [5.0, 5.0], [-1.0, 0.5]] {
        let problem = SimplexLsProblem::new(design.clone(), DVector::from_row_slice(&target), DEFAULT_PENALTY)?;
        let sol = solve_simplex_ls(&problem)?;
        println!(
            "target {:?}: weights {:.4?} (sum {:.12}), residual^2 {:.6}",
            target,
            sol.weights.as_slice(),
            sol.weights.sum(),
            problem.residual_sq(&sol.weights)
        );
    }
    Ok(())
}
