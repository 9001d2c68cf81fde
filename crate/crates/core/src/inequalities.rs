//! Harnesses for the three weighted inequalities: evaluate both sides on a
//! given weight and test function, apply the hypothesis checks, and report a
//! verdict with the discretization budget `tol_h = c_tol * h`.
//!
//! The quadratures follow the metric conventions of the grid module: squared
//! one-form norms carry `e^{-2psi}`, Laplacians `e^{-2psi}`, volumes
//! `e^{2psi}`. All three integrands are conformally invariant in two
//! dimensions, so flat and conformal runs agree up to round-off; the factors
//! are still applied per node rather than cancelled symbolically.
//!
//! Critical-node policy: when the support of `f` touches a node where
//! `|grad omega|` falls below the weight's gradient tolerance, the
//! `omega^4/|grad omega|^2` quadrature is reported as infinite and the
//! verdict is `pass-trivially` (the continuum integrand is infinite there);
//! a regularized value with `|grad omega|^2 + delta` is attached for
//! diagnostics.

use serde::{Serialize, Serializer};

use rand::Rng;

use crate::calculus;
use crate::error::{invalid, Result};
use crate::field::ScalarField;
use crate::grid::{distance_to_set, DomainDescriptor, Grid2D};
use crate::rng::rng_for;
use crate::weights::{build_weight, support_touches, Weight, WeightDescriptor, WeightTolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InequalityKind {
    Ckn,
    Elliptic,
    Epsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "pass-trivially")]
    PassTrivially,
    #[serde(rename = "fail")]
    Fail,
}

fn ser_maybe_infinite<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

/// Constants entering the right-hand sides and hypotheses.
#[derive(Debug, Clone, Copy, Serialize, Default)]
pub struct Constants {
    pub lambda1: Option<f64>,
    pub kappa: Option<f64>,
    pub tau: Option<f64>,
    pub eps: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub sup_omega: Option<f64>,
}

/// Evaluation record of one inequality check. `rhs` serializes to `null`
/// when infinite (the pass-trivially case).
#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub which: InequalityKind,
    pub lhs: f64,
    #[serde(serialize_with = "ser_maybe_infinite")]
    pub rhs: f64,
    pub ratio: f64,
    pub verdict: Verdict,
    pub margin: f64,
    pub h: f64,
    pub constants: Constants,
    pub excluded_nodes: usize,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_regularized: Option<f64>,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        matches!(self.verdict, Verdict::Pass | Verdict::PassTrivially)
    }

    pub fn with_seed(mut self, seed: u64) -> InequalityReport {
        self.seed = Some(seed);
        self
    }
}

/// Discretization-budget and regularization knobs.
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// multiplicative slack on the right-hand side is `c_tol * h`
    pub c_tol: f64,
    /// regularizer for the diagnostic `|grad omega|^2 + delta` quadrature
    pub reg_delta: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            c_tol: 10.0,
            reg_delta: 1e-10,
        }
    }
}

fn finish(
    which: InequalityKind,
    lhs: f64,
    rhs: f64,
    h: f64,
    c_tol: f64,
    constants: Constants,
    excluded: usize,
    flags: Vec<String>,
    rhs_regularized: Option<f64>,
) -> InequalityReport {
    let tol_h = c_tol * h;
    let (verdict, ratio, margin) = if rhs.is_infinite() {
        (Verdict::PassTrivially, 0.0, 1.0)
    } else if rhs == 0.0 {
        if lhs == 0.0 {
            (Verdict::Pass, 0.0, 1.0)
        } else {
            (Verdict::Fail, f64::INFINITY, f64::NEG_INFINITY)
        }
    } else if lhs <= rhs * (1.0 + tol_h) {
        (Verdict::Pass, lhs / rhs, (rhs - lhs) / rhs)
    } else {
        (Verdict::Fail, lhs / rhs, (rhs - lhs) / rhs)
    };
    InequalityReport {
        which,
        lhs,
        rhs,
        ratio,
        verdict,
        margin,
        h,
        constants,
        excluded_nodes: excluded,
        seed: None,
        flags,
        rhs_regularized,
    }
}

/// Count singular/critical nodes lying on or next to the support of `f`.
fn excluded_near_support(grid: &Grid2D, f: &ScalarField, w: &Weight) -> usize {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut count = 0;
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.idx(i, j);
            if !(w.singular_mask()[k] || w.critical_mask()[k]) {
                continue;
            }
            let mut near = f.values()[k] != 0.0;
            if !near && i > 0 {
                near = f.values()[k - 1] != 0.0;
            }
            if !near && i + 1 < nx {
                near = f.values()[k + 1] != 0.0;
            }
            if !near && j > 0 {
                near = f.values()[k - nx] != 0.0;
            }
            if !near && j + 1 < ny {
                near = f.values()[k + nx] != 0.0;
            }
            if near {
                count += 1;
            }
        }
    }
    count
}

fn common_checks(w: &Weight, f: &ScalarField) -> Result<Vec<String>> {
    if !w.grid().same_lattice(f.grid()) {
        return Err(invalid("check: weight and test function on different lattices"));
    }
    let mut flags = Vec::new();
    if support_touches(w.grid(), f, w.singular_mask()) {
        flags.push("support-touches-singular".to_string());
    }
    Ok(flags)
}

/// `∫ |grad omega|^2 f^2 dvol_g <= ∫ omega^2 |grad f|^2 dvol_g`, requiring
/// `kappa <= lambda1` pointwise (violations flag the report rather than
/// aborting it).
pub fn check_ckn(w: &Weight, f: &ScalarField, lambda1: f64) -> Result<InequalityReport> {
    check_ckn_with(w, f, lambda1, CheckOptions::default())
}

pub fn check_ckn_with(
    w: &Weight,
    f: &ScalarField,
    lambda1: f64,
    opt: CheckOptions,
) -> Result<InequalityReport> {
    let grid = w.grid();
    let mut flags = common_checks(w, f)?;
    if w.kappa().max_interior(grid) > lambda1 + 1e-12 {
        flags.push("hypothesis-violated".to_string());
    }
    let df = calculus::gradient(f);
    let h2 = grid.h() * grid.h();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (k, &m) in grid.interior_mask().iter().enumerate() {
        if !m {
            continue;
        }
        let inv = grid.inv_metric_factor(k);
        let vol = grid.vol_factor(k);
        let gn = w.grad_norm().values()[k];
        let om = w.omega().values()[k];
        let fv = f.values()[k];
        lhs += gn * gn * inv * fv * fv * vol;
        rhs += om * om * inv * df.norm_sq_at(k) * vol;
    }
    lhs *= h2;
    rhs *= h2;
    let constants = Constants {
        lambda1: Some(lambda1),
        kappa: w.kappa().constant_value(),
        sup_omega: Some(w.sup_omega()),
        ..Constants::default()
    };
    let excluded = excluded_near_support(grid, f, w);
    Ok(finish(
        InequalityKind::Ckn,
        lhs,
        rhs,
        grid.h(),
        opt.c_tol,
        constants,
        excluded,
        flags,
        None,
    ))
}

/// The `omega^4 / |grad omega|^2 |Lap_g f|^2` quadrature with the
/// critical-node policy. Returns `(value, regularized, contact)`.
fn fourth_order_integral(
    w: &Weight,
    f: &ScalarField,
    lap_f: &ScalarField,
    reg_delta: f64,
) -> (f64, f64, bool) {
    let grid = w.grid();
    let g_tol = w.tolerances().grad_tol;
    let contact = support_touches(grid, f, w.critical_mask());
    let h2 = grid.h() * grid.h();
    let mut plain = 0.0;
    let mut reg = 0.0;
    for (k, &m) in grid.interior_mask().iter().enumerate() {
        if !m {
            continue;
        }
        let lap = lap_f.values()[k];
        if lap == 0.0 {
            continue;
        }
        let inv = grid.inv_metric_factor(k);
        let vol = grid.vol_factor(k);
        let om = w.omega().values()[k];
        let gn2 = w.grad_norm().values()[k] * w.grad_norm().values()[k];
        let om4 = om * om * om * om;
        // |grad omega|^2_g = e^{-2psi} gn^2 and lap_f already carries
        // e^{-2psi}; together with dvol this leaves one net e^{-2psi}
        let base = lap * lap / inv * vol;
        reg += om4 / (gn2 + reg_delta) * base;
        if gn2 > g_tol * g_tol {
            plain += om4 / gn2 * base;
        } else {
            // only reachable when the support touches a critical node
            plain = f64::INFINITY;
        }
    }
    let value = if contact { f64::INFINITY } else { plain * h2 };
    (value, reg * h2, contact)
}

/// `∫ omega^2 |grad f|^2 <= tau^{-1} ∫ 2 omega^4/|grad omega|^2 |Lap_g f|^2
/// + 5 |grad omega|^2 |f|^2`, requiring
/// `-(lambda1/8)(2 - tau) <= kappa <= lambda1` for `0 < tau <= 2`.
pub fn check_elliptic(
    w: &Weight,
    f: &ScalarField,
    tau: f64,
    lambda1: f64,
) -> Result<InequalityReport> {
    check_elliptic_with(w, f, tau, lambda1, CheckOptions::default())
}

pub fn check_elliptic_with(
    w: &Weight,
    f: &ScalarField,
    tau: f64,
    lambda1: f64,
    opt: CheckOptions,
) -> Result<InequalityReport> {
    if !(tau > 0.0 && tau <= 2.0) {
        return Err(invalid(format!("check_elliptic: tau must be in (0, 2], got {tau}")));
    }
    let grid = w.grid();
    let mut flags = common_checks(w, f)?;
    let kmax = w.kappa().max_interior(grid);
    let kmin = w.kappa().min_interior(grid);
    if kmax > lambda1 + 1e-12 || kmin < -(lambda1 / 8.0) * (2.0 - tau) - 1e-12 {
        flags.push("hypothesis-violated".to_string());
    }
    let df = calculus::gradient(f);
    let lap_f = calculus::laplacian(f, grid)?;
    let h2 = grid.h() * grid.h();
    let mut lhs = 0.0;
    let mut zero_order = 0.0;
    for (k, &m) in grid.interior_mask().iter().enumerate() {
        if !m {
            continue;
        }
        let inv = grid.inv_metric_factor(k);
        let vol = grid.vol_factor(k);
        let om = w.omega().values()[k];
        let gn = w.grad_norm().values()[k];
        let fv = f.values()[k];
        lhs += om * om * inv * df.norm_sq_at(k) * vol;
        zero_order += gn * gn * inv * fv * fv * vol;
    }
    lhs *= h2;
    zero_order *= h2;
    let (fourth, fourth_reg, _) = fourth_order_integral(w, f, &lap_f, opt.reg_delta);
    let rhs = (2.0 * fourth + 5.0 * zero_order) / tau;
    let rhs_reg = (2.0 * fourth_reg + 5.0 * zero_order) / tau;
    let constants = Constants {
        lambda1: Some(lambda1),
        kappa: w.kappa().constant_value(),
        tau: Some(tau),
        sup_omega: Some(w.sup_omega()),
        ..Constants::default()
    };
    let excluded = excluded_near_support(grid, f, w);
    Ok(finish(
        InequalityKind::Elliptic,
        lhs,
        rhs,
        grid.h(),
        opt.c_tol,
        constants,
        excluded,
        flags,
        Some(rhs_reg),
    ))
}

/// The explicit constant `C(eps) = (8 eps^2 + 5 (1+eps)^4) / (8 (1+eps)^2)`,
/// which tends to `5/8` as `eps -> 0`.
pub fn c_epsilon(eps: f64) -> f64 {
    let e1 = 1.0 + eps;
    (8.0 * eps * eps + 5.0 * e1.powi(4)) / (8.0 * e1 * e1)
}

/// `∫ omega^{2+2eps} |grad f|^2 <= C(eps) (sup omega)^{2eps} / eps^2
/// ∫ omega^4/|grad omega|^2 |Lap_g f|^2`, requiring `kappa = 0` and a
/// bounded domain.
pub fn check_epsilon(w: &Weight, f: &ScalarField, eps: f64) -> Result<InequalityReport> {
    check_epsilon_with(w, f, eps, CheckOptions::default())
}

pub fn check_epsilon_with(
    w: &Weight,
    f: &ScalarField,
    eps: f64,
    opt: CheckOptions,
) -> Result<InequalityReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(invalid(format!("check_epsilon: eps must be positive, got {eps}")));
    }
    let grid = w.grid();
    let mut flags = common_checks(w, f)?;
    if !w.kappa().is_zero() {
        flags.push("hypothesis-violated".to_string());
    }
    let df = calculus::gradient(f);
    let lap_f = calculus::laplacian(f, grid)?;
    let h2 = grid.h() * grid.h();
    let mut lhs = 0.0;
    for (k, &m) in grid.interior_mask().iter().enumerate() {
        if !m {
            continue;
        }
        let inv = grid.inv_metric_factor(k);
        let vol = grid.vol_factor(k);
        let om = w.omega().values()[k];
        lhs += om.powf(2.0 + 2.0 * eps) * inv * df.norm_sq_at(k) * vol;
    }
    lhs *= h2;
    let sup = w.sup_omega();
    let cst = c_epsilon(eps) * sup.powf(2.0 * eps) / (eps * eps);
    let (fourth, fourth_reg, _) = fourth_order_integral(w, f, &lap_f, opt.reg_delta);
    let rhs = cst * fourth;
    let rhs_reg = cst * fourth_reg;
    let constants = Constants {
        kappa: w.kappa().constant_value(),
        eps: Some(eps),
        c: Some(c_epsilon(eps)),
        sup_omega: Some(sup),
        ..Constants::default()
    };
    let excluded = excluded_near_support(grid, f, w);
    Ok(finish(
        InequalityKind::Epsilon,
        lhs,
        rhs,
        grid.h(),
        opt.c_tol,
        constants,
        excluded,
        flags,
        Some(rhs_reg),
    ))
}

fn smoothstep01(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

/// Seeded sum of Gaussian bumps times a smooth cutoff that vanishes within
/// `margin` cells of the mask boundary and of every singular/critical node
/// of the active weight. Deterministic in the seed.
pub fn random_test_function(
    grid: &Grid2D,
    seed: u64,
    bumps: usize,
    margin: usize,
    weight: Option<&Weight>,
) -> Result<ScalarField> {
    if margin < 2 {
        return Err(invalid("random_test_function: margin must be at least 2 cells"));
    }
    if bumps == 0 {
        return Err(invalid("random_test_function: need at least one bump"));
    }
    let mut excluded: Vec<bool> = grid.interior_mask().iter().map(|&m| !m).collect();
    if let Some(w) = weight {
        if !w.grid().same_lattice(grid) {
            return Err(invalid("random_test_function: weight on a different lattice"));
        }
        for k in 0..grid.node_count() {
            if w.singular_mask()[k] || w.critical_mask()[k] {
                excluded[k] = true;
            }
        }
    }
    let dist = distance_to_set(grid, &excluded);
    let ramp = (margin as f64).max((0.05 / grid.h()).ceil());
    let cutoff: Vec<f64> = dist
        .iter()
        .map(|&d| smoothstep01((d - margin as f64) / ramp))
        .collect();
    let candidates: Vec<usize> = (0..grid.node_count()).filter(|&k| cutoff[k] >= 0.5).collect();
    if candidates.is_empty() {
        return Err(invalid(
            "random_test_function: no admissible support region at this margin",
        ));
    }
    let mut rng = rng_for(seed, 0);
    let (w_phys, h_phys) = (
        (grid.nx() - 1) as f64 * grid.h(),
        (grid.ny() - 1) as f64 * grid.h(),
    );
    let scale = w_phys.min(h_phys);
    let mut values = vec![0.0; grid.node_count()];
    for _ in 0..bumps {
        let ck = candidates[rng.gen_range(0..candidates.len())];
        let (ci, cj) = (ck % grid.nx(), ck / grid.nx());
        let c = grid.pos(ci, cj);
        let sigma = rng.gen_range(0.05..0.12) * scale;
        let amp = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let k = grid.idx(i, j);
                if cutoff[k] == 0.0 {
                    continue;
                }
                let (x, y) = grid.pos(i, j);
                let d2 = (x - c.0).powi(2) + (y - c.1).powi(2);
                values[k] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for k in 0..grid.node_count() {
        values[k] *= cutoff[k];
    }
    ScalarField::from_values(grid, values)
}

/// Closed-form compactly supported bump: Gaussians under a quintic radial
/// cutoff, defined in continuum coordinates so the same function can be
/// sampled at any resolution.
#[derive(Debug, Clone)]
pub struct ContinuumBump {
    pub gaussians: Vec<(f64, f64, f64, f64)>, // (cx, cy, sigma, amplitude)
    pub cut_center: (f64, f64),
    pub cut_radius: f64,
    pub cut_width: f64,
}

impl ContinuumBump {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = (x - self.cut_center.0).hypot(y - self.cut_center.1);
        let cut = smoothstep01((self.cut_radius - d) / self.cut_width);
        if cut == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for &(cx, cy, sigma, amp) in &self.gaussians {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            s += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        s * cut
    }

    pub fn sample(&self, grid: &Grid2D) -> ScalarField {
        ScalarField::from_fn_interior(grid, |x, y| self.eval(x, y))
    }
}

fn domain_center_and_halfwidth(domain: &DomainDescriptor) -> ((f64, f64), f64) {
    match *domain {
        DomainDescriptor::Rectangle { origin, size, .. } => (
            (origin[0] + size[0] / 2.0, origin[1] + size[1] / 2.0),
            0.5 * size[0].min(size[1]),
        ),
        DomainDescriptor::Disk { center, radius, .. } => ((center[0], center[1]), radius),
    }
}

/// The fixed bump used by refinement sweeps: same closed form at every
/// resolution.
pub fn fixed_bump(domain: &DomainDescriptor) -> ContinuumBump {
    let (c, r) = domain_center_and_halfwidth(domain);
    ContinuumBump {
        gaussians: vec![
            (c.0 + 0.17 * r, c.1 + 0.11 * r, 0.16 * r, 1.0),
            (c.0 - 0.21 * r, c.1 + 0.05 * r, 0.13 * r, -0.6),
        ],
        cut_center: c,
        cut_radius: 0.62 * r,
        cut_width: 0.18 * r,
    }
}

/// Seeded continuum bump for resolution-comparison studies.
pub fn seeded_bump(domain: &DomainDescriptor, seed: u64) -> ContinuumBump {
    let (c, r) = domain_center_and_halfwidth(domain);
    let mut rng = rng_for(seed, 1);
    let n = rng.gen_range(1..4usize);
    let mut gaussians = Vec::new();
    for _ in 0..n {
        let cx = c.0 + rng.gen_range(-0.3..0.3) * r;
        let cy = c.1 + rng.gen_range(-0.3..0.3) * r;
        let sigma = rng.gen_range(0.1..0.2) * r;
        let amp = rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        gaussians.push((cx, cy, sigma, amp));
    }
    ContinuumBump {
        gaussians,
        cut_center: c,
        cut_radius: 0.58 * r,
        cut_width: 0.2 * r,
    }
}

/// Parameters shared by the sweep entry points.
#[derive(Debug, Clone, Copy)]
pub struct CheckParams {
    pub tau: f64,
    pub eps: f64,
    pub lambda1: f64,
}

impl Default for CheckParams {
    fn default() -> Self {
        CheckParams {
            tau: 2.0,
            eps: 0.5,
            lambda1: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub resolution: usize,
    pub h: f64,
    pub lhs: f64,
    #[serde(serialize_with = "ser_maybe_infinite")]
    pub rhs: f64,
    pub ratio: f64,
    /// `max(0, lhs - rhs)/rhs`: how far the inequality is violated
    pub defect: f64,
    pub verdict: Verdict,
}

/// Re-run one check on the same closed-form bump at several resolutions.
/// Resolutions are nodes per unit length.
pub fn refinement_sweep(
    kind: InequalityKind,
    weight_desc: &WeightDescriptor,
    domain: &DomainDescriptor,
    params: CheckParams,
    resolutions: &[usize],
) -> Result<Vec<SweepRow>> {
    if resolutions.len() < 2 {
        return Err(invalid("refinement_sweep: need at least two resolutions"));
    }
    let bump = fixed_bump(domain);
    let mut rows = Vec::new();
    for &res in resolutions {
        let grid = domain.with_resolution(res).build()?;
        let w = build_weight(weight_desc, &grid, WeightTolerances::default())?;
        let f = bump.sample(&grid);
        let report = match kind {
            InequalityKind::Ckn => check_ckn(&w, &f, params.lambda1)?,
            InequalityKind::Elliptic => check_elliptic(&w, &f, params.tau, params.lambda1)?,
            InequalityKind::Epsilon => check_epsilon(&w, &f, params.eps)?,
        };
        let defect = if report.rhs.is_finite() && report.rhs > 0.0 {
            ((report.lhs - report.rhs) / report.rhs).max(0.0)
        } else {
            0.0
        };
        rows.push(SweepRow {
            resolution: res,
            h: grid.h(),
            lhs: report.lhs,
            rhs: report.rhs,
            ratio: report.ratio,
            defect,
            verdict: report.verdict,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{
        green_exponential_weight, power_product_weight, power_product_weight_with_tol,
    };

    fn disk(res: usize) -> Grid2D {
        Grid2D::build_disk((0.0, 0.0), 1.0, res).unwrap()
    }

    #[test]
    fn random_test_function_is_deterministic_and_seed_sensitive() {
        let g = disk(65);
        let f1 = random_test_function(&g, 42, 3, 4, None).unwrap();
        let f2 = random_test_function(&g, 42, 3, 4, None).unwrap();
        let f3 = random_test_function(&g, 43, 3, 4, None).unwrap();
        assert_eq!(f1.values(), f2.values());
        let mut diff = f1.clone();
        diff.axpy(-1.0, &f3);
        assert!(diff.l2_norm() > 0.0);
    }

    #[test]
    fn random_test_function_vanishes_in_margin_band() {
        let g = disk(65);
        let margin = 4usize;
        let f = random_test_function(&g, 7, 3, margin, None).unwrap();
        let excluded: Vec<bool> = g.interior_mask().iter().map(|&m| !m).collect();
        let dist = distance_to_set(&g, &excluded);
        for k in 0..g.node_count() {
            if dist[k] <= margin as f64 {
                assert_eq!(f.values()[k], 0.0, "node {k} inside the margin band");
            }
        }
        assert!(f.l2_norm() > 0.0);
    }

    #[test]
    fn random_test_function_rejects_hopeless_margins() {
        let g = disk(17);
        assert!(random_test_function(&g, 1, 2, 1, None).is_err());
        assert!(random_test_function(&g, 1, 2, 40, None).is_err());
    }

    #[test]
    fn ckn_constant_weight_passes_with_zero_lhs() {
        let g = disk(65);
        let w = green_exponential_weight(&[], &[], &g).unwrap();
        let f = random_test_function(&g, 3, 2, 4, None).unwrap();
        let rep = check_ckn(&w, &f, 0.0).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert!(rep.lhs.abs() < 1e-14);
        assert!(rep.rhs > 0.0);
    }

    #[test]
    fn ckn_abs_x_matches_power_form() {
        let g = disk(129);
        for &alpha in &[1.0f64, 0.5] {
            let w = power_product_weight(&[(0.0, 0.0)], &[alpha], &g).unwrap();
            let f = random_test_function(&g, 11, 3, 4, Some(&w)).unwrap();
            let rep = check_ckn(&w, &f, 0.0).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass, "alpha = {alpha}: {rep:?}");

            // same inequality in the displayed power form:
            // ∫ |x|^{2(a-1)} f^2 <= a^{-2} ∫ |x|^{2a} |grad f|^2
            let p = w.descriptor().points[0];
            let df = calculus::gradient(&f);
            let h2 = g.h() * g.h();
            let mut left = 0.0;
            let mut right = 0.0;
            for (k, &m) in g.interior_mask().iter().enumerate() {
                if !m {
                    continue;
                }
                let (x, y) = g.pos(k % g.nx(), k / g.nx());
                let r = (x - p[0]).hypot(y - p[1]);
                left += r.powf(2.0 * (alpha - 1.0)) * f.values()[k] * f.values()[k] * h2;
                right += r.powf(2.0 * alpha) * df.norm_sq_at(k) * h2;
            }
            assert!(
                left <= right / (alpha * alpha) * (1.0 + 10.0 * g.h()),
                "power form violated for alpha = {alpha}"
            );
        }
    }

    #[test]
    fn ckn_flags_hypothesis_violation() {
        let g = disk(49);
        let om = ScalarField::from_fn(&g, |x, y| (x * x + y * y).exp());
        let w = crate::weights::from_samples(om, crate::weights::Kappa::Constant(5.0), WeightTolerances::default())
            .unwrap();
        let f = random_test_function(&g, 5, 2, 4, None).unwrap();
        let rep = check_ckn(&w, &f, 1.0).unwrap();
        assert!(rep.flags.iter().any(|s| s == "hypothesis-violated"));
    }

    #[test]
    fn elliptic_zero_function_passes() {
        let g = disk(49);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        let f = ScalarField::zeros(&g);
        let rep = check_elliptic(&w, &f, 2.0, 0.0).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        assert_eq!(rep.lhs, 0.0);
        assert_eq!(rep.rhs, 0.0);
    }

    #[test]
    fn elliptic_rejects_bad_tau() {
        let g = disk(49);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        let f = random_test_function(&g, 2, 2, 4, Some(&w)).unwrap();
        assert!(check_elliptic(&w, &f, 0.0, 0.0).is_err());
        assert!(check_elliptic(&w, &f, 2.5, 0.0).is_err());
    }

    #[test]
    fn elliptic_abs_x_passes_and_matches_constants() {
        let g = disk(129);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        for seed in [1u64, 2, 3] {
            let f = random_test_function(&g, seed, 3, 4, Some(&w)).unwrap();
            let rep = check_elliptic(&w, &f, 2.0, 0.0).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass, "seed {seed}: {rep:?}");
            assert_eq!(rep.constants.tau, Some(2.0));
        }
    }

    #[test]
    fn elliptic_critical_contact_passes_trivially() {
        let g = disk(129);
        let h = g.h();
        let tol = WeightTolerances {
            omega_tol: 1e-12,
            grad_tol: 4.0 * h,
        };
        let w =
            power_product_weight_with_tol(&[(0.0, 0.0), (1.0, 0.0)], &[1.0, 1.0], &g, tol).unwrap();
        assert!(!w.critical_nodes().is_empty());
        // a bump deliberately centred on the saddle, generated without the
        // weight so the cutoff does not dodge the critical nodes
        let f = ScalarField::from_fn_interior(&g, |x, y| {
            let d2 = (x - 0.5).powi(2) + y * y;
            if d2 < 0.04 {
                (1.0 - d2 / 0.04).powi(3)
            } else {
                0.0
            }
        });
        let rep = check_elliptic(&w, &f, 2.0, 0.0).unwrap();
        assert_eq!(rep.verdict, Verdict::PassTrivially);
        assert!(rep.rhs.is_infinite());
        assert!(rep.rhs_regularized.unwrap().is_finite());
        assert!(rep.excluded_nodes > 0);
    }

    #[test]
    fn epsilon_constant_formula() {
        assert!((c_epsilon(1.0) - 2.75).abs() < 1e-15);
        assert!((c_epsilon(1e-6) - 0.625).abs() < 1e-5);
        assert!(check_epsilon(
            &power_product_weight(&[(0.0, 0.0)], &[1.0], &disk(33)).unwrap(),
            &ScalarField::zeros(&disk(33)),
            0.0
        )
        .is_err());
    }

    #[test]
    fn epsilon_abs_x_passes() {
        let g = disk(129);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        for seed in [4u64, 5] {
            let f = random_test_function(&g, seed, 3, 4, Some(&w)).unwrap();
            let rep = check_epsilon(&w, &f, 0.5).unwrap();
            assert_eq!(rep.verdict, Verdict::Pass, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn homogeneity_in_f_is_exact() {
        let g = disk(65);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        let f = random_test_function(&g, 9, 2, 4, Some(&w)).unwrap();
        let mut cf = f.clone();
        cf.scale(3.0);
        let r1 = check_ckn(&w, &f, 0.0).unwrap();
        let r9 = check_ckn(&w, &cf, 0.0).unwrap();
        assert!((r9.lhs - 9.0 * r1.lhs).abs() <= 1e-13 * r9.lhs.abs().max(1e-300));
        assert!((r9.rhs - 9.0 * r1.rhs).abs() <= 1e-13 * r9.rhs.abs().max(1e-300));
        assert!((r9.ratio - r1.ratio).abs() < 1e-12);
        assert_eq!(r9.verdict, r1.verdict);
    }

    #[test]
    fn weight_scaling_leaves_ratio_invariant() {
        let g = disk(65);
        let base = ScalarField::from_fn(&g, |x, y| x.hypot(y));
        let mut scaled = base.clone();
        scaled.scale(3.0);
        let w1 = crate::weights::from_samples(base, crate::weights::Kappa::zero(), WeightTolerances::default()).unwrap();
        let w3 = crate::weights::from_samples(scaled, crate::weights::Kappa::zero(), WeightTolerances::default()).unwrap();
        let f = random_test_function(&g, 13, 2, 4, None).unwrap();
        let c1 = check_ckn(&w1, &f, 0.0).unwrap();
        let c3 = check_ckn(&w3, &f, 0.0).unwrap();
        assert!((c3.lhs - 9.0 * c1.lhs).abs() < 1e-10 * c3.lhs.abs());
        assert!((c3.rhs - 9.0 * c1.rhs).abs() < 1e-10 * c3.rhs.abs());
        let e1 = check_epsilon(&w1, &f, 0.5).unwrap();
        let e3 = check_epsilon(&w3, &f, 0.5).unwrap();
        // lhs scales by c^{2+2eps} = 27, rhs by c^{2eps} * c^2 = 27
        assert!((e3.lhs - 27.0 * e1.lhs).abs() < 1e-9 * e3.lhs.abs());
        assert!((e3.rhs - 27.0 * e1.rhs).abs() < 1e-9 * e3.rhs.abs());
        assert!((e3.ratio - e1.ratio).abs() < 1e-9);
    }

    #[test]
    fn conformal_invariance_is_exact_per_node() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 65).unwrap();
        let psi = ScalarField::from_fn(&g, |x, y| {
            0.3 * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        });
        let cg = g.with_conformal_factor(&psi).unwrap();
        let w = power_product_weight(&[(0.52, 0.48)], &[1.0], &g).unwrap();
        let f = random_test_function(&g, 21, 2, 4, Some(&w)).unwrap();
        let flat = check_elliptic(&w, &f, 2.0, 0.0).unwrap();
        let wc = w.on_grid(&cg).unwrap();
        let fc = f.on_grid(&cg).unwrap();
        let conf = check_elliptic(&wc, &fc, 2.0, 0.0).unwrap();
        assert!((flat.lhs - conf.lhs).abs() < 1e-12 * flat.lhs.abs());
        assert!((flat.rhs - conf.rhs).abs() < 1e-12 * flat.rhs.abs());
    }

    #[test]
    fn sweep_needs_two_resolutions_and_converges() {
        let domain = DomainDescriptor::Disk {
            center: [0.0, 0.0],
            radius: 1.0,
            resolution: 65,
        };
        let desc = WeightDescriptor {
            family: crate::weights::WeightFamily::PowerProduct,
            points: vec![[0.0, 0.0]],
            alphas: vec![1.0],
            kappa: crate::weights::KappaSpec::Number(0.0),
            values_path: None,
        };
        assert!(refinement_sweep(
            InequalityKind::Ckn,
            &desc,
            &domain,
            CheckParams::default(),
            &[65]
        )
        .is_err());
        let rows = refinement_sweep(
            InequalityKind::Ckn,
            &desc,
            &domain,
            CheckParams::default(),
            &[65, 129],
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert_eq!(row.verdict, Verdict::Pass);
            assert!(row.defect <= 10.0 * row.h);
        }
        // the ratio settles as h shrinks
        assert!((rows[0].ratio - rows[1].ratio).abs() < 0.05);
    }

    #[test]
    fn report_serializes_spec_keys() {
        let g = disk(49);
        let w = power_product_weight(&[(0.0, 0.0)], &[1.0], &g).unwrap();
        let f = random_test_function(&g, 2, 2, 4, Some(&w)).unwrap();
        let rep = check_ckn(&w, &f, 0.0).unwrap().with_seed(2);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["which", "lhs", "rhs", "ratio", "verdict", "margin", "h", "constants", "excluded_nodes", "seed"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        assert!(json["constants"].get("lambda1").is_some());
        assert_eq!(json["verdict"], "pass");
    }
}
