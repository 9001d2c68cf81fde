//! Admissible weight families and the weak weight-equation checker.
//!
//! A weight stores its samples, the (analytic or numerical) gradient with its
//! pointwise norm, the curvature function `kappa`, and the singular/critical
//! node sets that downstream quadratures must avoid. Analytic families set
//! `kappa = 0` by construction; a diagnostic estimator recovers
//! `kappa = -Lap_g ln(omega)` pointwise for sampled weights.

use serde::{Deserialize, Serialize};

use crate::calculus;
use crate::error::{invalid, Result};
use crate::field::{OneForm, ScalarField};
use crate::grid::Grid2D;
use crate::solver::{apply_neg_laplacian, cg_solve_detailed};

/// Thresholds separating true zeros of `omega` from critical points of its
/// gradient. Both are configurable per construction; gradient saddles of
/// product weights sit between lattice nodes, so detecting them at a given
/// resolution needs `grad_tol` of the order of the lattice spacing.
#[derive(Debug, Clone, Copy)]
pub struct WeightTolerances {
    pub omega_tol: f64,
    pub grad_tol: f64,
}

impl Default for WeightTolerances {
    fn default() -> Self {
        WeightTolerances {
            omega_tol: 1e-12,
            grad_tol: 1e-8,
        }
    }
}

/// Curvature datum of the weight equation.
#[derive(Debug, Clone)]
pub enum Kappa {
    Constant(f64),
    Field(ScalarField),
}

impl Kappa {
    pub fn zero() -> Kappa {
        Kappa::Constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Kappa::Constant(c) => *c == 0.0,
            Kappa::Field(f) => f.values().iter().all(|&v| v == 0.0),
        }
    }

    pub fn at(&self, idx: usize) -> f64 {
        match self {
            Kappa::Constant(c) => *c,
            Kappa::Field(f) => f.values()[idx],
        }
    }

    /// Largest value over interior nodes (the pointwise hypothesis checks
    /// compare this against the first eigenvalue).
    pub fn max_interior(&self, grid: &Grid2D) -> f64 {
        match self {
            Kappa::Constant(c) => *c,
            Kappa::Field(f) => f
                .values()
                .iter()
                .zip(grid.interior_mask())
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn min_interior(&self, grid: &Grid2D) -> f64 {
        match self {
            Kappa::Constant(c) => *c,
            Kappa::Field(f) => f
                .values()
                .iter()
                .zip(grid.interior_mask())
                .filter(|(_, &m)| m)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Kappa::Constant(c) => Some(*c),
            Kappa::Field(_) => None,
        }
    }
}

/// JSON wire format of a weight construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightDescriptor {
    pub family: WeightFamily,
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub kappa: KappaSpec,
    /// Only for the `sampled` family: CSV file (`x,y,value`) with the samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightFamily {
    PowerProduct,
    GreenExponential,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Number(f64),
    /// The string `"field"`: estimate kappa numerically.
    Field(KappaFieldTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaFieldTag {
    Field,
}

impl Default for KappaSpec {
    fn default() -> Self {
        KappaSpec::Number(0.0)
    }
}

/// A nonnegative weight with cached gradient data and flagged node sets.
#[derive(Debug, Clone)]
pub struct Weight {
    omega: ScalarField,
    grad_omega: OneForm,
    grad_norm: ScalarField,
    kappa: Kappa,
    singular_mask: Vec<bool>,
    critical_mask: Vec<bool>,
    tolerances: WeightTolerances,
    descriptor: WeightDescriptor,
}

impl Weight {
    pub fn omega(&self) -> &ScalarField {
        &self.omega
    }

    pub fn grad_omega(&self) -> &OneForm {
        &self.grad_omega
    }

    /// Pointwise flat norm `|grad omega|`; metric factors are applied by the
    /// quadratures that consume it.
    pub fn grad_norm(&self) -> &ScalarField {
        &self.grad_norm
    }

    pub fn kappa(&self) -> &Kappa {
        &self.kappa
    }

    pub fn grid(&self) -> &Grid2D {
        self.omega.grid()
    }

    pub fn tolerances(&self) -> WeightTolerances {
        self.tolerances
    }

    pub fn descriptor(&self) -> &WeightDescriptor {
        &self.descriptor
    }

    pub fn singular_mask(&self) -> &[bool] {
        &self.singular_mask
    }

    pub fn critical_mask(&self) -> &[bool] {
        &self.critical_mask
    }

    pub fn singular_nodes(&self) -> Vec<usize> {
        mask_to_nodes(&self.singular_mask)
    }

    pub fn critical_nodes(&self) -> Vec<usize> {
        mask_to_nodes(&self.critical_mask)
    }

    /// Max of `omega` over interior nodes.
    pub fn sup_omega(&self) -> f64 {
        self.omega
            .values()
            .iter()
            .zip(self.grid().interior_mask())
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(0.0, f64::max)
    }

    /// Rebind the weight to a conformal version of the same lattice.
    pub fn on_grid(&self, grid: &Grid2D) -> Result<Weight> {
        Ok(Weight {
            omega: self.omega.on_grid(grid)?,
            grad_omega: self.grad_omega.on_grid(grid)?,
            grad_norm: self.grad_norm.on_grid(grid)?,
            kappa: match &self.kappa {
                Kappa::Constant(c) => Kappa::Constant(*c),
                Kappa::Field(f) => Kappa::Field(f.on_grid(grid)?),
            },
            singular_mask: self.singular_mask.clone(),
            critical_mask: self.critical_mask.clone(),
            tolerances: self.tolerances,
            descriptor: self.descriptor.clone(),
        })
    }
}

fn mask_to_nodes(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(k, &b)| b.then_some(k))
        .collect()
}

fn flag_nodes(omega: &ScalarField, grad_norm: &ScalarField, tol: WeightTolerances) -> (Vec<bool>, Vec<bool>) {
    let n = omega.grid().node_count();
    let mut singular = vec![false; n];
    let mut critical = vec![false; n];
    for k in 0..n {
        if omega.values()[k] < tol.omega_tol {
            singular[k] = true;
        } else if grad_norm.values()[k] < tol.grad_tol {
            critical[k] = true;
        }
    }
    (singular, critical)
}

/// `omega(x) = prod_i |x - x_i|^{alpha_i}` with its analytic gradient
/// `grad omega = omega * sum_i alpha_i (x - x_i)/|x - x_i|^2` and `kappa = 0`
/// (each `ln|x - x_i|` is harmonic away from its point). Requested points
/// that land on lattice nodes are shifted by `h/2` in both axes; the shifted
/// points are the ones recorded in the descriptor.
pub fn power_product_weight(
    points: &[(f64, f64)],
    alphas: &[f64],
    grid: &Grid2D,
) -> Result<Weight> {
    power_product_weight_with_tol(points, alphas, grid, WeightTolerances::default())
}

pub fn power_product_weight_with_tol(
    points: &[(f64, f64)],
    alphas: &[f64],
    grid: &Grid2D,
    tol: WeightTolerances,
) -> Result<Weight> {
    if points.is_empty() || alphas.is_empty() {
        return Err(invalid("power_product_weight: empty point or exponent list"));
    }
    if points.len() != alphas.len() {
        return Err(invalid("power_product_weight: points/alphas length mismatch"));
    }
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(invalid("power_product_weight: exponents must be positive"));
    }
    let mut eff = Vec::with_capacity(points.len());
    for &p in points {
        if !grid.contains(p) {
            return Err(invalid(format!(
                "power_product_weight: point ({}, {}) lies outside the domain box",
                p.0, p.1
            )));
        }
        eff.push(grid.offset_off_node(p).0);
    }
    let n = grid.node_count();
    let mut omega = vec![0.0; n];
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            let k = grid.idx(i, j);
            let (x, y) = grid.pos(i, j);
            let mut w = 1.0;
            let mut sx = 0.0;
            let mut sy = 0.0;
            for (p, &al) in eff.iter().zip(alphas) {
                let dx = x - p.0;
                let dy = y - p.1;
                let r2 = dx * dx + dy * dy;
                w *= r2.sqrt().powf(al);
                sx += al * dx / r2;
                sy += al * dy / r2;
            }
            omega[k] = w;
            ga[k] = w * sx;
            gb[k] = w * sy;
        }
    }
    let omega = ScalarField::from_values(grid, omega)?;
    let grad_omega = OneForm::from_components(grid, ga, gb)?;
    let grad_norm = pointwise_norm(&grad_omega);
    let (singular_mask, critical_mask) = flag_nodes(&omega, &grad_norm, tol);
    Ok(Weight {
        omega,
        grad_omega,
        grad_norm,
        kappa: Kappa::zero(),
        singular_mask,
        critical_mask,
        tolerances: tol,
        descriptor: WeightDescriptor {
            family: WeightFamily::PowerProduct,
            points: eff.iter().map(|p| [p.0, p.1]).collect(),
            alphas: alphas.to_vec(),
            kappa: KappaSpec::Number(0.0),
            values_path: None,
        },
    })
}

fn pointwise_norm(w: &OneForm) -> ScalarField {
    let mut out = ScalarField::zeros(w.grid());
    for k in 0..w.grid().node_count() {
        out.values_mut()[k] = w.norm_sq_at(k).sqrt();
    }
    out
}

/// Options for the Green's function solves.
#[derive(Debug, Clone, Copy)]
pub struct GreenOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            tol: 1e-12,
            max_iter: 0, // 0 = scale with the grid
        }
    }
}

/// Discrete Dirichlet Green's function: solves `-Lap G = delta_p / h^2`
/// with the unit discrete point mass on the node nearest to `p` (after the
/// off-node shift; exact ties keep the original node) and `G = 0` on the
/// masked-out region. `-Lap G` integrates to exactly one.
pub fn green_function(grid: &Grid2D, p: (f64, f64)) -> Result<ScalarField> {
    green_function_with(grid, p, GreenOptions::default())
}

pub fn green_function_with(grid: &Grid2D, p: (f64, f64), opt: GreenOptions) -> Result<ScalarField> {
    if !grid.contains(p) {
        return Err(invalid(format!("green_function: point ({}, {}) outside domain", p.0, p.1)));
    }
    let (q, _) = grid.offset_off_node(p);
    let (i, j) = grid.nearest_node(q);
    if !grid.is_interior(i, j) {
        return Err(invalid("green_function: source point is not interior"));
    }
    let mut rhs = ScalarField::zeros(grid);
    let h2 = grid.h() * grid.h();
    let k = grid.idx(i, j);
    rhs.values_mut()[k] = 1.0 / h2;
    let max_iter = if opt.max_iter == 0 {
        30 * (grid.nx() + grid.ny()) + 1000
    } else {
        opt.max_iter
    };
    let out = cg_solve_detailed(&apply_neg_laplacian, None, &rhs, opt.tol, max_iter)
        .into_result("green_function")?;
    Ok(out.field)
}

/// `omega = exp(-sum_i alpha_i G_{p_i})`. The gradient is centered
/// differences of `ln omega` scaled by `omega`; `kappa = 0` away from the
/// source points. With no points at all this is the constant weight 1.
/// Source nodes (where the point masses sit) are marked singular since the
/// finite-difference gradient is untrusted there.
pub fn green_exponential_weight(
    points: &[(f64, f64)],
    alphas: &[f64],
    grid: &Grid2D,
) -> Result<Weight> {
    green_exponential_weight_with(points, alphas, grid, WeightTolerances::default(), GreenOptions::default())
}

pub fn green_exponential_weight_with(
    points: &[(f64, f64)],
    alphas: &[f64],
    grid: &Grid2D,
    tol: WeightTolerances,
    opt: GreenOptions,
) -> Result<Weight> {
    if points.len() != alphas.len() {
        return Err(invalid("green_exponential_weight: points/alphas length mismatch"));
    }
    if alphas.iter().any(|&a| !(a > 0.0)) {
        return Err(invalid("green_exponential_weight: exponents must be positive"));
    }
    let n = grid.node_count();
    let mut ln_omega = vec![0.0; n];
    let mut mass_nodes = Vec::new();
    let mut eff = Vec::new();
    for (&p, &al) in points.iter().zip(alphas) {
        let g = green_function_with(grid, p, opt)?;
        let (q, _) = grid.offset_off_node(p);
        eff.push(q);
        let (i, j) = grid.nearest_node(q);
        mass_nodes.push(grid.idx(i, j));
        for k in 0..n {
            ln_omega[k] -= al * g.values()[k];
        }
    }
    let ln_field = ScalarField::from_values(grid, ln_omega.clone())?;
    let mut omega = vec![0.0; n];
    for k in 0..n {
        omega[k] = ln_omega[k].exp();
    }
    let omega = ScalarField::from_values(grid, omega)?;
    let dln = calculus::gradient(&ln_field);
    let mut ga = vec![0.0; n];
    let mut gb = vec![0.0; n];
    for k in 0..n {
        ga[k] = omega.values()[k] * dln.a()[k];
        gb[k] = omega.values()[k] * dln.b()[k];
    }
    let grad_omega = OneForm::from_components(grid, ga, gb)?;
    let grad_norm = pointwise_norm(&grad_omega);
    let (mut singular_mask, critical_mask) = flag_nodes(&omega, &grad_norm, tol);
    for &k in &mass_nodes {
        singular_mask[k] = true;
    }
    Ok(Weight {
        omega,
        grad_omega,
        grad_norm,
        kappa: Kappa::zero(),
        singular_mask,
        critical_mask,
        tolerances: tol,
        descriptor: WeightDescriptor {
            family: WeightFamily::GreenExponential,
            points: eff.iter().map(|p| [p.0, p.1]).collect(),
            alphas: alphas.to_vec(),
            kappa: KappaSpec::Number(0.0),
            values_path: None,
        },
    })
}

/// Weight from user-supplied samples; the gradient is computed by centered
/// differences of the samples themselves.
pub fn from_samples(omega: ScalarField, kappa: Kappa, tol: WeightTolerances) -> Result<Weight> {
    if omega.values().iter().any(|&v| v < 0.0) {
        return Err(invalid("sampled weight must be nonnegative"));
    }
    let grad_omega = calculus::gradient(&omega);
    let grad_norm = pointwise_norm(&grad_omega);
    let (singular_mask, critical_mask) = flag_nodes(&omega, &grad_norm, tol);
    let kappa_spec = match &kappa {
        Kappa::Constant(c) => KappaSpec::Number(*c),
        Kappa::Field(_) => KappaSpec::Field(KappaFieldTag::Field),
    };
    Ok(Weight {
        omega,
        grad_omega,
        grad_norm,
        kappa,
        singular_mask,
        critical_mask,
        tolerances: tol,
        descriptor: WeightDescriptor {
            family: WeightFamily::Sampled,
            points: vec![],
            alphas: vec![],
            kappa: kappa_spec,
            values_path: None,
        },
    })
}

/// Build the analytic families from a descriptor (the `sampled` family needs
/// its values loaded by the caller).
pub fn build_weight(desc: &WeightDescriptor, grid: &Grid2D, tol: WeightTolerances) -> Result<Weight> {
    let pts: Vec<(f64, f64)> = desc.points.iter().map(|p| (p[0], p[1])).collect();
    match desc.family {
        WeightFamily::PowerProduct => power_product_weight_with_tol(&pts, &desc.alphas, grid, tol),
        WeightFamily::GreenExponential => green_exponential_weight_with(
            &pts,
            &desc.alphas,
            grid,
            tol,
            GreenOptions::default(),
        ),
        WeightFamily::Sampled => Err(invalid(
            "sampled weights need their values loaded from values_path by the caller",
        )),
    }
}

/// Residual of the weak weight equation against a test function:
/// `∫ (4|grad omega|^2 - 2 kappa omega^2) phi - omega^2 Lap_g phi dvol_g`.
/// Zero means `omega` weakly satisfies the weight equation for this `phi`.
#[derive(Debug, Clone, Copy)]
pub struct WeakResidual {
    pub value: f64,
    /// False when the support of `phi` touches a singular node or its
    /// immediate neighbours; the quadrature is then untrusted.
    pub trusted: bool,
}

pub fn weak_equation_residual(
    w: &Weight,
    kappa: &Kappa,
    phi: &ScalarField,
) -> Result<WeakResidual> {
    let grid = w.grid();
    if !grid.same_lattice(phi.grid()) {
        return Err(invalid("weak_equation_residual: phi on a different lattice"));
    }
    let lap_phi = calculus::laplacian(phi, grid)?;
    let h2 = grid.h() * grid.h();
    let mut acc = 0.0;
    for (k, &m) in grid.interior_mask().iter().enumerate() {
        if !m {
            continue;
        }
        let vol = grid.vol_factor(k);
        let inv = grid.inv_metric_factor(k);
        let gn2 = w.grad_norm().values()[k] * w.grad_norm().values()[k];
        let om2 = w.omega().values()[k] * w.omega().values()[k];
        let term = (4.0 * gn2 * inv - 2.0 * kappa.at(k) * om2) * phi.values()[k]
            - om2 * lap_phi.values()[k];
        acc += term * vol;
    }
    let value = acc * h2;
    let trusted = !support_touches(grid, phi, w.singular_mask());
    Ok(WeakResidual { value, trusted })
}

/// True if the support of `f` (nonzero nodes) intersects `mask` or its
/// 4-neighbourhood.
pub(crate) fn support_touches(grid: &Grid2D, f: &ScalarField, mask: &[bool]) -> bool {
    let (nx, ny) = (grid.nx(), grid.ny());
    for j in 0..ny {
        for i in 0..nx {
            let k = grid.idx(i, j);
            if f.values()[k] == 0.0 {
                continue;
            }
            if mask[k]
                || (i > 0 && mask[k - 1])
                || (i + 1 < nx && mask[k + 1])
                || (j > 0 && mask[k - nx])
                || (j + 1 < ny && mask[k + nx])
            {
                return true;
            }
        }
    }
    false
}

/// Diagnostic estimate `kappa(x) = -Lap_g ln(omega)` on interior nodes whose
/// neighbourhood stays away from singular values; zero elsewhere.
pub fn estimate_kappa(w: &Weight) -> ScalarField {
    let grid = w.grid().clone();
    let (nx, _ny) = (grid.nx(), grid.ny());
    let om = w.omega().values();
    let tol = w.tolerances().omega_tol;
    let mut ln_vals = vec![0.0; grid.node_count()];
    for k in 0..grid.node_count() {
        ln_vals[k] = if om[k] > tol { om[k].ln() } else { 0.0 };
    }
    let invh2 = 1.0 / (grid.h() * grid.h());
    let mut out = ScalarField::zeros(&grid);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if !grid.is_interior(i, j) {
                continue;
            }
            let k = grid.idx(i, j);
            let ok = om[k] > tol
                && om[k - 1] > tol
                && om[k + 1] > tol
                && om[k - nx] > tol
                && om[k + nx] > tol;
            if ok {
                let flat = (ln_vals[k + 1] + ln_vals[k - 1] + ln_vals[k + nx] + ln_vals[k - nx]
                    - 4.0 * ln_vals[k])
                    * invh2;
                out.values_mut()[k] = -grid.inv_metric_factor(k) * flat;
            }
        }
    }
    out
}
