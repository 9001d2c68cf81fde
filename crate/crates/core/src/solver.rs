//! Preconditioned conjugate gradients on the interior degrees of freedom.
//!
//! Iterates are full-grid scalar fields that vanish off the interior mask;
//! operators must map that subspace to itself and be symmetric positive
//! (semi-)definite on it with the right-hand side in their range.

use crate::error::{Result, WelError};
use crate::field::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStop {
    Converged,
    MaxIterations,
    /// `p^T A p <= 0` was observed: the operator is not positive definite.
    Indefinite,
    ZeroRhs,
}

/// Outcome of a CG run, carrying the best iterate even on failure.
#[derive(Debug)]
pub struct CgOutcome {
    pub field: ScalarField,
    pub iterations: usize,
    pub relative_residual: f64,
    pub stop: CgStop,
}

impl CgOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.stop, CgStop::Converged | CgStop::ZeroRhs)
    }

    pub fn into_result(self, context: &str) -> Result<CgOutcome> {
        if self.converged() {
            Ok(self)
        } else {
            Err(WelError::SolverFailure {
                context: context.to_string(),
                residual: self.relative_residual,
                iterations: self.iterations,
            })
        }
    }
}

fn interior_dot(grid: &crate::grid::Grid2D, u: &[f64], v: &[f64]) -> f64 {
    let mask = grid.interior_mask();
    let mut s = 0.0;
    for (k, &m) in mask.iter().enumerate() {
        if m {
            s += u[k] * v[k];
        }
    }
    s
}

/// CG with an optional diagonal (or other SPD) preconditioner given as a
/// closure. Stops when `||r|| <= tol * ||rhs||`.
pub fn cg_solve_detailed(
    apply: &dyn Fn(&ScalarField) -> ScalarField,
    precondition: Option<&dyn Fn(&ScalarField) -> ScalarField>,
    rhs: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let grid = rhs.grid().clone();
    let b_norm = interior_dot(&grid, rhs.values(), rhs.values()).sqrt();
    let mut x = ScalarField::zeros(&grid);
    if b_norm == 0.0 {
        return CgOutcome {
            field: x,
            iterations: 0,
            relative_residual: 0.0,
            stop: CgStop::ZeroRhs,
        };
    }
    let mut r = rhs.clone();
    let mut z = match precondition {
        Some(m) => m(&r),
        None => r.clone(),
    };
    let mut p = z.clone();
    let mut rz = interior_dot(&grid, r.values(), z.values());
    let mut best = x.clone();
    let mut best_res = 1.0f64;
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = interior_dot(&grid, p.values(), ap.values());
        if !(pap > 0.0) {
            return CgOutcome {
                field: best,
                iterations: it,
                relative_residual: best_res,
                stop: CgStop::Indefinite,
            };
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rnorm = interior_dot(&grid, r.values(), r.values()).sqrt();
        let rel = rnorm / b_norm;
        if rel < best_res {
            best_res = rel;
            best = x.clone();
        }
        if rel <= tol {
            return CgOutcome {
                field: x,
                iterations: it,
                relative_residual: rel,
                stop: CgStop::Converged,
            };
        }
        z = match precondition {
            Some(m) => m(&r),
            None => r.clone(),
        };
        let rz_new = interior_dot(&grid, r.values(), z.values());
        let beta = rz_new / rz;
        rz = rz_new;
        let mut p_next = z.clone();
        p_next.axpy(beta, &p);
        p = p_next;
    }
    CgOutcome {
        field: best,
        iterations: max_iter,
        relative_residual: best_res,
        stop: CgStop::MaxIterations,
    }
}

/// Plain CG returning the solution or a solver-failure error.
pub fn cg_solve(
    apply: impl Fn(&ScalarField) -> ScalarField,
    rhs: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarField> {
    let out = cg_solve_detailed(&apply, None, rhs, tol, max_iter).into_result("cg_solve")?;
    Ok(out.field)
}

/// Negative five-point Dirichlet Laplacian (SPD on the interior subspace).
pub fn apply_neg_laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let invh2 = 1.0 / (g.h() * g.h());
    let v = f.values();
    let mut out = ScalarField::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                out.values_mut()[k] =
                    (4.0 * v[k] - v[k + 1] - v[k - 1] - v[k + nx] - v[k - nx]) * invh2;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use std::f64::consts::PI;

    #[test]
    fn identity_operator_converges_immediately() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        let rhs = ScalarField::from_fn_interior(&g, |x, y| x + y);
        let out = cg_solve_detailed(&|f| f.clone(), None, &rhs, 1e-12, 10);
        assert_eq!(out.stop, CgStop::Converged);
        assert_eq!(out.iterations, 1);
        for k in 0..g.node_count() {
            assert!((out.field.values()[k] - rhs.values()[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn manufactured_poisson_solution_recovered() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 33).unwrap();
        let exact = ScalarField::from_fn_interior(&g, |x, y| (PI * x).sin() * (PI * y).sin());
        let rhs = apply_neg_laplacian(&exact);
        let sol = cg_solve(apply_neg_laplacian, &rhs, 1e-12, 2000).unwrap();
        let mut diff = sol.clone();
        diff.axpy(-1.0, &exact);
        assert!(diff.l2_norm() < 1e-9 * exact.l2_norm().max(1.0));
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        let rhs = ScalarField::zeros(&g);
        let out = cg_solve_detailed(&apply_neg_laplacian, None, &rhs, 1e-12, 10);
        assert_eq!(out.stop, CgStop::ZeroRhs);
    }

    #[test]
    fn shifted_indefinite_operator_detected() {
        // -Lap - s with s beyond the smallest eigenvalue is indefinite
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 17).unwrap();
        let h = g.h();
        let lam1 = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2); // discrete value on the square
        let shift = 1.5 * lam1;
        let apply = move |f: &ScalarField| {
            let mut out = apply_neg_laplacian(f);
            for (k, &m) in f.grid().interior_mask().iter().enumerate() {
                if m {
                    out.values_mut()[k] -= shift * f.values()[k];
                }
            }
            out
        };
        let rhs = ScalarField::from_fn_interior(&g, |x, y| (PI * x).sin() * (PI * y).sin());
        let out = cg_solve_detailed(&apply, None, &rhs, 1e-12, 500);
        assert_eq!(out.stop, CgStop::Indefinite);
        assert!(cg_solve(apply, &rhs, 1e-12, 500).is_err());
    }

    #[test]
    fn max_iterations_reported_with_best_iterate() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 33).unwrap();
        let rhs = ScalarField::from_fn_interior(&g, |x, y| {
            let d2 = (x - 0.4).powi(2) + (y - 0.6).powi(2);
            (-d2 / 0.02).exp()
        });
        let out = cg_solve_detailed(&apply_neg_laplacian, None, &rhs, 1e-14, 10);
        assert_eq!(out.stop, CgStop::MaxIterations);
        assert!(out.relative_residual > 0.0 && out.relative_residual < 1.0);
        assert!(out.into_result("test").is_err());
    }
}
