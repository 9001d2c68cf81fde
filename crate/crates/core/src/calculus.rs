//! Discrete differential operators on collocated node data: centered
//! gradient/divergence/curl, the Hodge star, two Laplacians, midpoint
//! quadrature, and the two-dimensional symmetric-matrix identity.
//!
//! Two Laplacians coexist on purpose. The compact five-point stencil is the
//! default for integrand evaluation; the wide operator (the composition of
//! centered first differences) is the one that is exactly adjoint to the
//! centered gradient, so summation-by-parts identities hold to round-off
//! with it.

use crate::error::{invalid, Result};
use crate::field::{OneForm, ScalarField};
use crate::grid::Grid2D;

/// Centered-difference exterior derivative of a scalar: coefficients of
/// `df = f_x dx + f_y dy`, defined on interior nodes, zero elsewhere.
pub fn gradient(f: &ScalarField) -> OneForm {
    let g = f.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let inv2h = 1.0 / (2.0 * g.h());
    let v = f.values();
    let mut w = OneForm::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                w.a_mut()[k] = (v[k + 1] - v[k - 1]) * inv2h;
                w.b_mut()[k] = (v[k + nx] - v[k - nx]) * inv2h;
            }
        }
    }
    w
}

/// Flat centered divergence `a_x + b_y` on interior nodes, zero elsewhere.
pub fn divergence(w: &OneForm) -> ScalarField {
    let g = w.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let inv2h = 1.0 / (2.0 * g.h());
    let mut out = ScalarField::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                out.values_mut()[k] =
                    (w.a()[k + 1] - w.a()[k - 1] + w.b()[k + nx] - w.b()[k - nx]) * inv2h;
            }
        }
    }
    out
}

/// Hodge star on one-forms: `(a, b) -> (-b, a)`. Conformally invariant, so
/// no metric factor appears.
pub fn hodge_star(w: &OneForm) -> OneForm {
    let mut out = OneForm::zeros(w.grid());
    for k in 0..w.grid().node_count() {
        out.a_mut()[k] = -w.b()[k];
        out.b_mut()[k] = w.a()[k];
    }
    out
}

/// Scalar curl `e^{-2psi} (b_x - a_y)`: the function identified with the
/// two-form `dw` through the metric's star. Interior nodes only.
pub fn curl(w: &OneForm) -> ScalarField {
    let g = w.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let inv2h = 1.0 / (2.0 * g.h());
    let mut out = ScalarField::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                let flat = (w.b()[k + 1] - w.b()[k - 1] - w.a()[k + nx] + w.a()[k - nx]) * inv2h;
                out.values_mut()[k] = g.inv_metric_factor(k) * flat;
            }
        }
    }
    out
}

/// Laplace–Beltrami by the compact five-point stencil scaled with
/// `e^{-2psi}`; the metric factors come from `grid`, which must share the
/// field's lattice.
pub fn laplacian(f: &ScalarField, grid: &Grid2D) -> Result<ScalarField> {
    if !f.grid().same_lattice(grid) {
        return Err(invalid("laplacian: field and grid lattices differ"));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let invh2 = 1.0 / (grid.h() * grid.h());
    let v = f.values();
    let mut out = ScalarField::zeros(grid);
    for j in 0..ny {
        for i in 0..nx {
            if grid.is_interior(i, j) {
                let k = grid.idx(i, j);
                let flat = (v[k + 1] + v[k - 1] + v[k + nx] + v[k - nx] - 4.0 * v[k]) * invh2;
                out.values_mut()[k] = grid.inv_metric_factor(k) * flat;
            }
        }
    }
    Ok(out)
}

/// Flat five-point Laplacian on the field's own grid, without metric scaling.
pub fn laplacian_flat(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let invh2 = 1.0 / (g.h() * g.h());
    let v = f.values();
    let mut out = ScalarField::zeros(g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                out.values_mut()[k] =
                    (v[k + 1] + v[k - 1] + v[k + nx] + v[k - nx] - 4.0 * v[k]) * invh2;
            }
        }
    }
    out
}

/// Wide Laplacian: `divergence(gradient(f))` written out directly. This is
/// the exact adjoint composition of the centered differences (including
/// their interior masking), so `<f, laplacian_wide(g)> = -<df, dg>` holds to
/// round-off for compactly supported fields.
pub fn laplacian_wide(f: &ScalarField) -> ScalarField {
    let g = f.grid().clone();
    let (nx, ny) = (g.nx(), g.ny());
    let inv2h = 1.0 / (2.0 * g.h());
    let v = f.values();
    // centered differences at interior nodes, zero elsewhere
    let diff = |i: usize, j: usize, axis: usize| -> f64 {
        if !g.is_interior(i, j) {
            return 0.0;
        }
        let k = g.idx(i, j);
        match axis {
            0 => (v[k + 1] - v[k - 1]) * inv2h,
            _ => (v[k + nx] - v[k - nx]) * inv2h,
        }
    };
    let mut out = ScalarField::zeros(&g);
    for j in 0..ny {
        for i in 0..nx {
            if g.is_interior(i, j) {
                let k = g.idx(i, j);
                out.values_mut()[k] = (diff(i + 1, j, 0) - diff(i - 1, j, 0)
                    + diff(i, j + 1, 1)
                    - diff(i, j - 1, 1))
                    * inv2h;
            }
        }
    }
    out
}

/// Midpoint quadrature of `f dvol_g`: sum over interior nodes of
/// `f e^{2psi} h^2`.
pub fn integrate(f: &ScalarField) -> f64 {
    let g = f.grid();
    let h2 = g.h() * g.h();
    let mask = g.interior_mask();
    let mut s = 0.0;
    for (k, &m) in mask.iter().enumerate() {
        if m {
            s += f.values()[k] * g.vol_factor(k);
        }
    }
    s * h2
}

/// `∫ f g dvol_g`.
pub fn inner(f: &ScalarField, g: &ScalarField) -> f64 {
    let grid = f.grid();
    let h2 = grid.h() * grid.h();
    let mask = grid.interior_mask();
    let mut s = 0.0;
    for (k, &m) in mask.iter().enumerate() {
        if m {
            s += f.values()[k] * g.values()[k] * grid.vol_factor(k);
        }
    }
    s * h2
}

/// `∫ <u, w>_g dvol_g` for one-forms; the `e^{-2psi}` of the metric and the
/// `e^{2psi}` of the volume cancel by conformal invariance, both factors are
/// still applied per node.
pub fn one_form_inner(u: &OneForm, w: &OneForm) -> f64 {
    let grid = u.grid();
    let h2 = grid.h() * grid.h();
    let mask = grid.interior_mask();
    let mut s = 0.0;
    for (k, &m) in mask.iter().enumerate() {
        if m {
            let dot = u.a()[k] * w.a()[k] + u.b()[k] * w.b()[k];
            s += dot * grid.inv_metric_factor(k) * grid.vol_factor(k);
        }
    }
    s * h2
}

/// Symmetric 2x2 matrix; symmetry is structural (only the upper triangle is
/// stored).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub fn new(a11: f64, a12: f64, a22: f64) -> Sym2 {
        Sym2 { a11, a12, a22 }
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// `<A : u ⊗ v> = Σ A_ij u_i v_j`.
    pub fn quad(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        self.a11 * u[0] * v[0]
            + self.a12 * (u[0] * v[1] + u[1] * v[0])
            + self.a22 * u[1] * v[1]
    }

    /// Eigenvalues (ascending) and orthonormal eigenvectors.
    pub fn eigen(&self) -> ([f64; 2], [[f64; 2]; 2]) {
        let half_tr = 0.5 * self.trace();
        let det = self.a11 * self.a22 - self.a12 * self.a12;
        let disc = (half_tr * half_tr - det).max(0.0).sqrt();
        let mu = [half_tr - disc, half_tr + disc];
        if disc <= 1e-14 * (1.0 + half_tr.abs()) {
            // (near-)multiple of the identity: any orthonormal basis works
            return (mu, [[1.0, 0.0], [0.0, 1.0]]);
        }
        let mut vecs = [[0.0f64; 2]; 2];
        for (k, &m) in mu.iter().enumerate() {
            // two algebraically equivalent eigenvector formulas; keep the
            // better-conditioned one
            let v1 = [self.a12, m - self.a11];
            let v2 = [m - self.a22, self.a12];
            let n1 = v1[0] * v1[0] + v1[1] * v1[1];
            let n2 = v2[0] * v2[0] + v2[1] * v2[1];
            let v = if n1 >= n2 { v1 } else { v2 };
            let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
            vecs[k] = [v[0] / n, v[1] / n];
        }
        (mu, vecs)
    }
}

/// Compensated (double-double) scalar: exact-product and exact-sum pairs.
/// The identity below cancels ~1e4-sized quadratic forms down to order one,
/// so plain f64 evaluation loses the last few digits; the compensated route
/// returns both sides correctly rounded.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: err }
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        let err = a.mul_add(b, -p);
        Dd { hi: p, lo: err }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        let lo = s.lo + self.lo + o.lo;
        let r = Dd::two_sum(s.hi, lo);
        Dd { hi: r.hi, lo: r.lo }
    }

    fn mul(self, o: Dd) -> Dd {
        let p = Dd::two_prod(self.hi, o.hi);
        let lo = p.lo + self.hi * o.lo + self.lo * o.hi;
        let r = Dd::two_sum(p.hi, lo);
        Dd { hi: r.hi, lo: r.lo }
    }

    fn scale(self, c: f64) -> Dd {
        self.mul(Dd::from(c))
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn quad_dd(a: &Sym2, u: [f64; 2], v: [f64; 2]) -> Dd {
    let t1 = Dd::two_prod(u[0], v[0]).scale(a.a11);
    let t2 = Dd::two_prod(u[0], v[1])
        .add(Dd::two_prod(u[1], v[0]))
        .scale(a.a12);
    let t3 = Dd::two_prod(u[1], v[1]).scale(a.a22);
    t1.add(t2).add(t3)
}

fn dot_dd(u: [f64; 2], v: [f64; 2]) -> Dd {
    Dd::two_prod(u[0], v[0]).add(Dd::two_prod(u[1], v[1]))
}

/// Both sides of the symmetric-matrix identity in two dimensions:
///
/// `lhs = 2 <A:b⊗c><b,c> - <A:b⊗b>|c|^2 - <A:c⊗c>|b|^2`
/// `rhs = -trace(A) <b, c⊥>^2`,  `c⊥ = (-c2, c1)`.
///
/// The two agree identically; the trace-free case (the one the elliptic
/// estimates rely on) makes both vanish regardless of sign conventions.
pub fn sym2_identity(a: &Sym2, b: [f64; 2], c: [f64; 2]) -> (f64, f64) {
    let bc = dot_dd(b, c);
    let bb = dot_dd(b, b);
    let cc = dot_dd(c, c);
    let lhs = quad_dd(a, b, c)
        .mul(bc)
        .scale(2.0)
        .add(quad_dd(a, b, b).mul(cc).scale(-1.0))
        .add(quad_dd(a, c, c).mul(bb).scale(-1.0))
        .value();
    let cperp = [-c[1], c[0]];
    let bcp = dot_dd(b, cperp);
    let rhs = bcp.mul(bcp).scale(-a.trace()).value();
    (lhs, rhs)
}
