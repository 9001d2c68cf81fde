//! First Dirichlet eigenvalue of the Laplace–Beltrami operator and the
//! log-polar cylinder computations on the punctured disk.
//!
//! The eigenvalue solver runs inverse power iteration on the five-point
//! Dirichlet Laplacian (generalized with the `e^{2psi}` mass on conformal
//! grids), each step a conjugate-gradient solve. The cylinder side samples a
//! disk field through `t = -ln(|x|/R)`, Fourier-transforms in the angle, and
//! evaluates the zeroth/first/fourth-order mode energies with trapezoid
//! quadrature in `t`; angular derivatives are exact in Fourier space, so
//! pure-mode examples are exact in the angle.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, WelError};
use crate::field::ScalarField;
use crate::grid::{DomainDescriptor, Grid2D};
use crate::solver::{apply_neg_laplacian, cg_solve_detailed};

/// Outcome of the eigenvalue estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenReport {
    pub lambda1: f64,
    pub iterations: usize,
    pub h: f64,
    pub domain: DomainDescriptor,
}

/// Smallest Dirichlet eigenvalue via inverse power iteration; converged when
/// successive Rayleigh quotients differ by less than `tol * lambda`.
pub fn first_dirichlet_eigenvalue(grid: &Grid2D, tol: f64) -> Result<EigenReport> {
    if grid.interior_count() == 0 {
        return Err(invalid("eigenvalue: grid has no interior nodes"));
    }
    if !(tol > 0.0) {
        return Err(invalid("eigenvalue: tolerance must be positive"));
    }
    let mass = |f: &ScalarField| -> ScalarField {
        let mut out = ScalarField::zeros(grid);
        for (k, &m) in grid.interior_mask().iter().enumerate() {
            if m {
                out.values_mut()[k] = grid.vol_factor(k) * f.values()[k];
            }
        }
        out
    };
    let dot = |u: &ScalarField, v: &ScalarField| -> f64 {
        let mut s = 0.0;
        for (k, &m) in grid.interior_mask().iter().enumerate() {
            if m {
                s += u.values()[k] * v.values()[k];
            }
        }
        s
    };

    let mut x = ScalarField::from_fn_interior(grid, |_, _| 1.0);
    let nrm = dot(&x, &mass(&x)).sqrt();
    x.scale(1.0 / nrm);
    let mut lambda = f64::INFINITY;
    let max_outer = 500;
    let inner_tol = (tol * 1e-2).min(1e-10);
    let max_inner = 40 * (grid.nx() + grid.ny()) + 1000;
    for it in 1..=max_outer {
        let rhs = mass(&x);
        let solve = cg_solve_detailed(&apply_neg_laplacian, None, &rhs, inner_tol, max_inner);
        if !solve.converged() {
            return Err(WelError::SolverFailure {
                context: "eigenvalue inner CG".to_string(),
                residual: solve.relative_residual,
                iterations: solve.iterations,
            });
        }
        let mut y = solve.field;
        let ynrm = dot(&y, &mass(&y)).sqrt();
        y.scale(1.0 / ynrm);
        let ay = apply_neg_laplacian(&y);
        let new_lambda = dot(&y, &ay) / dot(&y, &mass(&y));
        let done = (new_lambda - lambda).abs() < tol * new_lambda.abs();
        lambda = new_lambda;
        x = y;
        if done {
            return Ok(EigenReport {
                lambda1: lambda,
                iterations: it,
                h: grid.h(),
                domain: grid.descriptor().clone(),
            });
        }
    }
    Err(WelError::SolverFailure {
        context: "eigenvalue iteration budget exceeded".to_string(),
        residual: f64::NAN,
        iterations: max_outer,
    })
}

/// Field on the half-cylinder `[0, t_max] x S^1`, stored as Fourier modes in
/// the angle: `u(t, theta) = sum_m v_m(t) e^{i m theta}` for `|m| <= m_max`.
#[derive(Debug, Clone)]
pub struct CylinderField {
    t_max: f64,
    nt: usize,
    m_max: i32,
    /// index `m + m_max`, each profile has `nt` samples on `[0, t_max]`
    modes: Vec<Vec<Complex64>>,
}

impl CylinderField {
    pub fn from_mode_fn(
        t_max: f64,
        nt: usize,
        m_max: i32,
        f: impl Fn(i32, f64) -> Complex64,
    ) -> Result<CylinderField> {
        if !(t_max > 0.0) || nt < 4 || m_max < 0 {
            return Err(invalid("cylinder: need t_max > 0, nt >= 4, m_max >= 0"));
        }
        let dt = t_max / (nt - 1) as f64;
        let mut modes = Vec::with_capacity((2 * m_max + 1) as usize);
        for m in -m_max..=m_max {
            let prof: Vec<Complex64> = (0..nt).map(|k| f(m, k as f64 * dt)).collect();
            if prof.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(invalid("cylinder: non-finite mode coefficient"));
            }
            modes.push(prof);
        }
        Ok(CylinderField {
            t_max,
            nt,
            m_max,
            modes,
        })
    }

    /// `u(t, theta) = sin(theta)`: modes `m = ±1` with constant profiles.
    pub fn sin_theta(t_max: f64, nt: usize, m_max: i32) -> Result<CylinderField> {
        if m_max < 1 {
            return Err(invalid("sin_theta case needs m_max >= 1"));
        }
        CylinderField::from_mode_fn(t_max, nt, m_max, |m, _| match m {
            1 => Complex64::new(0.0, -0.5),
            -1 => Complex64::new(0.0, 0.5),
            _ => Complex64::new(0.0, 0.0),
        })
    }

    /// `u ≡ 1`: the zero mode with a constant profile.
    pub fn constant(t_max: f64, nt: usize, m_max: i32) -> Result<CylinderField> {
        CylinderField::from_mode_fn(t_max, nt, m_max, |m, _| {
            if m == 0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn m_max(&self) -> i32 {
        self.m_max
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.nt - 1) as f64
    }

    pub fn mode(&self, m: i32) -> &[Complex64] {
        &self.modes[(m + self.m_max) as usize]
    }

    pub fn mode_mut(&mut self, m: i32) -> &mut [Complex64] {
        let i = (m + self.m_max) as usize;
        &mut self.modes[i]
    }

    /// Real-valued fields have conjugate-symmetric modes.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        for m in 0..=self.m_max {
            let pos = self.mode(m);
            let neg = self.mode(-m);
            for k in 0..self.nt {
                if (pos[k].conj() - neg[k]).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn scale(&mut self, c: f64) {
        for prof in &mut self.modes {
            for v in prof.iter_mut() {
                *v *= c;
            }
        }
    }
}

/// Pull a disk field through the log-polar map `t = -ln(rho/R)` and expand
/// in angular Fourier modes; `u = rho * f` is the transformed function. The
/// support of `f` must stay inside the representable annulus
/// `R e^{-t_max} < rho < R`.
pub fn logpolar_transform(
    f: &ScalarField,
    t_max: f64,
    nt: usize,
    m_max: i32,
) -> Result<CylinderField> {
    let grid = f.grid();
    let (center, radius) = match *grid.descriptor() {
        DomainDescriptor::Disk { center, radius, .. } => ((center[0], center[1]), radius),
        _ => return Err(invalid("logpolar_transform requires a disk grid")),
    };
    if !(t_max > 0.0) || nt < 4 || m_max < 1 {
        return Err(invalid("logpolar: need t_max > 0, nt >= 4, m_max >= 1"));
    }
    // support must stay inside the representable annulus
    let fmax = f.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let h = grid.h();
    let rho_min = radius * (-t_max).exp();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.pos(i, j);
            let rho = (x - center.0).hypot(y - center.1);
            let outside = rho <= rho_min || rho >= radius - 2.0 * h;
            if outside && f.at(i, j).abs() > 1e-12 * fmax.max(1e-300) {
                return Err(invalid(
                    "logpolar: field support leaves the representable annulus",
                ));
            }
        }
    }

    let ntheta = (4 * m_max.max(1) as usize).next_power_of_two().max(16);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(ntheta);
    let dt = t_max / (nt - 1) as f64;
    let mut modes = vec![vec![Complex64::new(0.0, 0.0); nt]; (2 * m_max + 1) as usize];
    let mut row = vec![Complex64::new(0.0, 0.0); ntheta];
    for k in 0..nt {
        let t = k as f64 * dt;
        let rho = radius * (-t).exp();
        for (jj, slot) in row.iter_mut().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * jj as f64 / ntheta as f64;
            let x = center.0 + rho * theta.cos();
            let y = center.1 + rho * theta.sin();
            let val = rho * f.interp((x, y));
            *slot = Complex64::new(val, 0.0);
        }
        fft.process(&mut row);
        for m in -m_max..=m_max {
            let bin = if m >= 0 { m as usize } else { ntheta - (-m) as usize };
            modes[(m + m_max) as usize][k] = row[bin] / ntheta as f64;
        }
    }
    Ok(CylinderField {
        t_max,
        nt,
        m_max,
        modes,
    })
}

/// Push a cylinder field back to the disk: `f = u / rho`, zero outside the
/// representable annulus.
pub fn logpolar_inverse(u: &CylinderField, grid: &Grid2D) -> Result<ScalarField> {
    let (center, radius) = match *grid.descriptor() {
        DomainDescriptor::Disk { center, radius, .. } => ((center[0], center[1]), radius),
        _ => return Err(invalid("logpolar_inverse requires a disk grid")),
    };
    let dt = u.dt();
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let (x, y) = grid.pos(i, j);
            let dx = x - center.0;
            let dy = y - center.1;
            let rho = dx.hypot(dy);
            if rho <= radius * (-u.t_max()).exp() || rho >= radius {
                continue;
            }
            let t = -(rho / radius).ln();
            let theta = dy.atan2(dx);
            // linear interpolation of each mode profile in t
            let s = (t / dt).min((u.nt() - 1) as f64);
            let k0 = (s.floor() as usize).min(u.nt() - 2);
            let frac = s - k0 as f64;
            let mut val = Complex64::new(0.0, 0.0);
            for m in -u.m_max()..=u.m_max() {
                let prof = u.mode(m);
                let vm = prof[k0] * (1.0 - frac) + prof[k0 + 1] * frac;
                val += vm * Complex64::from_polar(1.0, m as f64 * theta);
            }
            out.values_mut()[grid.idx(i, j)] = val.re / rho;
        }
    }
    Ok(out)
}

/// Mode energies of the cylinder field with the `e^{-2 eps t}` weight:
/// `zeroth = ∫ |u|^2 e^{-2 eps t}`,
/// `first = ∫ (|grad u|^2 + |u|^2) e^{-2 eps t}`, and, for `eps = 0` only,
/// `fourth = ∫ |u_tt|^2 + |u_ttheta|^2 + 2|u_t|^2 + |u_thetatheta + u|^2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CylinderEnergies {
    pub zeroth: f64,
    pub first: f64,
    pub fourth: Option<f64>,
}

pub fn cylinder_energies(u: &CylinderField, eps: f64) -> Result<CylinderEnergies> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid("cylinder_energies: eps must be >= 0"));
    }
    let nt = u.nt();
    let dt = u.dt();
    let two_pi = 2.0 * std::f64::consts::PI;
    let weight: Vec<f64> = (0..nt).map(|k| (-2.0 * eps * k as f64 * dt).exp()).collect();
    let tw = |k: usize| if k == 0 || k == nt - 1 { 0.5 } else { 1.0 };

    let mut zeroth = 0.0;
    let mut first = 0.0;
    let mut fourth = 0.0;
    for m in -u.m_max()..=u.m_max() {
        let v = u.mode(m);
        let dv = d_dt(v, dt);
        let ddv = d2_dt2(v, dt);
        let m2 = (m as f64) * (m as f64);
        for k in 0..nt {
            let w = tw(k) * dt;
            let vv = v[k].norm_sqr();
            let dvv = dv[k].norm_sqr();
            zeroth += w * weight[k] * vv;
            first += w * weight[k] * (dvv + (m2 + 1.0) * vv);
            if eps == 0.0 {
                let curv = (1.0 - m2) * (1.0 - m2) * vv;
                fourth += w * (ddv[k].norm_sqr() + m2 * dvv + 2.0 * dvv + curv);
            }
        }
    }
    Ok(CylinderEnergies {
        zeroth: two_pi * zeroth,
        first: two_pi * first,
        fourth: if eps == 0.0 { Some(two_pi * fourth) } else { None },
    })
}

/// Centered first derivative in `t`, second-order one-sided at the ends.
fn d_dt(v: &[Complex64], dt: f64) -> Vec<Complex64> {
    let n = v.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let inv2 = 1.0 / (2.0 * dt);
    for k in 1..n - 1 {
        out[k] = (v[k + 1] - v[k - 1]) * inv2;
    }
    out[0] = (v[0] * -3.0 + v[1] * 4.0 - v[2]) * inv2;
    out[n - 1] = (v[n - 1] * 3.0 - v[n - 2] * 4.0 + v[n - 3]) * inv2;
    out
}

/// Centered second derivative, second-order one-sided at the ends.
fn d2_dt2(v: &[Complex64], dt: f64) -> Vec<Complex64> {
    let n = v.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let inv = 1.0 / (dt * dt);
    for k in 1..n - 1 {
        out[k] = (v[k + 1] - v[k] * 2.0 + v[k - 1]) * inv;
    }
    out[0] = (v[0] * 2.0 - v[1] * 5.0 + v[2] * 4.0 - v[3]) * inv;
    out[n - 1] = (v[n - 1] * 2.0 - v[n - 2] * 5.0 + v[n - 3] * 4.0 - v[n - 4]) * inv;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn discrete_square_lambda1(h: f64) -> f64 {
        2.0 * (2.0 - 2.0 * (PI * h).cos()) / (h * h)
    }

    #[test]
    fn unit_square_eigenvalue_matches_discrete_formula() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 33).unwrap();
        let rep = first_dirichlet_eigenvalue(&g, 1e-10).unwrap();
        let exact = discrete_square_lambda1(g.h());
        assert!(
            (rep.lambda1 - exact).abs() < 1e-6 * exact,
            "lambda {} vs discrete {}",
            rep.lambda1,
            exact
        );
        assert!((rep.lambda1 - 2.0 * PI * PI).abs() < 0.01 * 2.0 * PI * PI);
    }

    #[test]
    fn tall_rectangle_eigenvalue() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 2.0), 33).unwrap();
        let rep = first_dirichlet_eigenvalue(&g, 1e-9).unwrap();
        let h = g.h();
        let exact = (2.0 - 2.0 * (PI * h).cos()) / (h * h)
            + (2.0 - 2.0 * (PI * h / 2.0).cos()) / (h * h);
        assert!((rep.lambda1 - exact).abs() < 1e-5 * exact);
        assert!((rep.lambda1 - 1.25 * PI * PI).abs() < 0.01 * 1.25 * PI * PI);
    }

    #[test]
    fn disk_eigenvalue_near_bessel_zero() {
        let g = Grid2D::build_disk((0.0, 0.0), 1.0, 65).unwrap();
        let rep = first_dirichlet_eigenvalue(&g, 1e-9).unwrap();
        let exact = 2.404825557695773f64.powi(2);
        assert!(
            (rep.lambda1 - exact).abs() < 0.01 * exact,
            "disk lambda {} vs {}",
            rep.lambda1,
            exact
        );
    }

    #[test]
    fn eigenvalue_error_shrinks_under_refinement() {
        let exact = 2.0 * PI * PI;
        let mut errs = Vec::new();
        for res in [17usize, 33, 65] {
            let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), res).unwrap();
            let rep = first_dirichlet_eigenvalue(&g, 1e-9).unwrap();
            errs.push((rep.lambda1 - exact).abs());
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
    }

    #[test]
    fn conformal_constant_scales_eigenvalue() {
        // g = e^{2c} delta divides lambda1 by e^{2c}
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 33).unwrap();
        let c = 0.3;
        let psi = ScalarField::from_fn(&g, |_, _| c);
        let cg = g.with_conformal_factor(&psi).unwrap();
        let flat = first_dirichlet_eigenvalue(&g, 1e-9).unwrap().lambda1;
        let conf = first_dirichlet_eigenvalue(&cg, 1e-9).unwrap().lambda1;
        assert!((conf - flat * (-2.0 * c).exp()).abs() < 1e-6 * conf);
    }

    #[test]
    fn sin_theta_case_exact_energies() {
        let t_max = 12.0;
        let u = CylinderField::sin_theta(t_max, 1024, 32).unwrap();
        let e = cylinder_energies(&u, 0.0).unwrap();
        assert!(e.fourth.unwrap().abs() < 1e-12, "fourth {}", e.fourth.unwrap());
        assert!(
            (e.zeroth - PI * t_max).abs() < 1e-10 * PI * t_max,
            "zeroth {}",
            e.zeroth
        );
        // |grad u|^2 + |u|^2 = cos^2 + sin^2 integrated over the cylinder
        assert!((e.first - 2.0 * PI * t_max).abs() < 1e-9 * e.first);
    }

    #[test]
    fn constant_case_fourth_energy() {
        let t_max = 12.0;
        let u = CylinderField::constant(t_max, 1024, 8).unwrap();
        let e = cylinder_energies(&u, 0.0).unwrap();
        assert!((e.fourth.unwrap() - 2.0 * PI * t_max).abs() < 1e-10 * e.fourth.unwrap());
        assert!((e.zeroth - 2.0 * PI * t_max).abs() < 1e-10 * e.zeroth);
    }

    #[test]
    fn exponential_weight_closed_form() {
        let t_max = 30.0;
        let eps = 0.5;
        let u = CylinderField::constant(t_max, 4096, 4).unwrap();
        let e = cylinder_energies(&u, eps).unwrap();
        let exact = 2.0 * PI * (1.0 - (-2.0 * eps * t_max).exp()) / (2.0 * eps);
        assert!(e.fourth.is_none());
        assert!(
            (e.zeroth - exact).abs() < 1e-4 * exact,
            "zeroth {} vs {}",
            e.zeroth,
            exact
        );
        // as t_max grows this approaches pi/eps: the compactified measure scale
        assert!((e.zeroth - PI / eps).abs() < 1e-3 * PI / eps);
    }

    #[test]
    fn energies_are_quadratic_in_the_field() {
        let mut u = CylinderField::from_mode_fn(8.0, 256, 4, |m, t| {
            Complex64::new((-(t - 3.0) * (t - 3.0)).exp() / (1.0 + m.abs() as f64), 0.0)
        })
        .unwrap();
        let e1 = cylinder_energies(&u, 0.0).unwrap();
        u.scale(3.0);
        let e9 = cylinder_energies(&u, 0.0).unwrap();
        assert!((e9.zeroth - 9.0 * e1.zeroth).abs() < 1e-10 * e9.zeroth.abs());
        assert!((e9.first - 9.0 * e1.first).abs() < 1e-10 * e9.first.abs());
        assert!(
            (e9.fourth.unwrap() - 9.0 * e1.fourth.unwrap()).abs() < 1e-10 * e9.fourth.unwrap()
        );
    }

    #[test]
    fn transform_isolates_single_mode() {
        let g = Grid2D::build_disk((0.0, 0.0), 1.0, 129).unwrap();
        // f = sin(theta)/rho * chi(t) with chi a bump in t
        let chi = |t: f64| {
            let s: f64 = (t - 3.0) / 1.5;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        };
        let f = ScalarField::from_fn(&g, |x, y| {
            let rho = x.hypot(y);
            if rho < 1e-12 {
                return 0.0;
            }
            let t = -(rho.ln());
            (y / rho) / rho * chi(t)
        });
        let u = logpolar_transform(&f, 12.0, 512, 8).unwrap();
        assert!(u.is_conjugate_symmetric(1e-12));
        let dt = u.dt();
        for m in -8..=8i32 {
            let prof = u.mode(m);
            let peak = prof.iter().map(|c| c.norm()).fold(0.0, f64::max);
            if m == 1 || m == -1 {
                let k = (3.0 / dt).round() as usize;
                let expect = 0.5 * chi(3.0);
                assert!(
                    (prof[k].norm() - expect).abs() < 0.02 * expect,
                    "mode {m} profile {} vs {expect}",
                    prof[k].norm()
                );
            } else {
                assert!(peak < 1e-6, "mode {m} should vanish, peak {peak}");
            }
        }
    }

    #[test]
    fn transform_rejects_bad_support() {
        let g = Grid2D::build_disk((0.0, 0.0), 1.0, 65).unwrap();
        let f = ScalarField::from_fn(&g, |_, _| 1.0); // supported up to the boundary
        assert!(logpolar_transform(&f, 12.0, 256, 4).is_err());
    }

    #[test]
    fn round_trip_recovers_band_limited_field() {
        let g = Grid2D::build_disk((0.0, 0.0), 1.0, 257).unwrap();
        let chi = |t: f64| {
            let s: f64 = (t - 2.0) / 1.2;
            if s.abs() < 1.0 {
                (1.0 - s * s).powi(3)
            } else {
                0.0
            }
        };
        let f = ScalarField::from_fn(&g, |x, y| {
            let rho = x.hypot(y);
            if rho < 1e-12 {
                return 0.0;
            }
            let t = -(rho.ln());
            let theta = y.atan2(x);
            ((2.0 * theta).cos() + 0.5 * theta.sin()) / rho * chi(t)
        });
        let u = logpolar_transform(&f, 10.0, 1024, 8).unwrap();
        let back = logpolar_inverse(&u, &g).unwrap();
        let mut max_err = 0.0f64;
        let mut max_val = 0.0f64;
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let (x, y) = g.pos(i, j);
                let rho = x.hypot(y);
                if rho > 0.05 && rho < 0.9 {
                    max_err = max_err.max((back.at(i, j) - f.at(i, j)).abs());
                    max_val = max_val.max(f.at(i, j).abs());
                }
            }
        }
        assert!(max_err < 5e-3 * max_val, "round trip err {max_err} vs {max_val}");
    }
}
