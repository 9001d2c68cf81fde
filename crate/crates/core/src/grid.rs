//! Uniform square-cell lattices over rectangles and masked disks, carrying an
//! interior mask and an optional conformally flat metric `g = e^{2psi} delta`.
//!
//! Interior nodes are the degrees of freedom: every interior node is
//! guaranteed to have its four lattice neighbours in bounds, so five-point
//! stencils never index outside the array. Domains other than rectangles are
//! represented by masking a bounding rectangle, not by body-fitted meshes.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::ScalarField;

/// Geometry descriptor, kept for reports and reproducible re-construction.
///
/// `resolution` is in nodes per unit length, so the lattice spacing is
/// `h = 1 / (resolution - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DomainDescriptor {
    Rectangle {
        origin: [f64; 2],
        size: [f64; 2],
        resolution: usize,
    },
    Disk {
        center: [f64; 2],
        radius: f64,
        resolution: usize,
    },
}

impl DomainDescriptor {
    /// Rebuild the grid this descriptor came from.
    pub fn build(&self) -> Result<Grid2D> {
        match *self {
            DomainDescriptor::Rectangle {
                origin,
                size,
                resolution,
            } => Grid2D::build_rectangle((origin[0], origin[1]), (size[0], size[1]), resolution),
            DomainDescriptor::Disk {
                center,
                radius,
                resolution,
            } => Grid2D::build_disk((center[0], center[1]), radius, resolution),
        }
    }

    /// Same geometry at a different nodes-per-unit resolution.
    pub fn with_resolution(&self, resolution: usize) -> DomainDescriptor {
        let mut d = self.clone();
        match &mut d {
            DomainDescriptor::Rectangle { resolution: r, .. } => *r = resolution,
            DomainDescriptor::Disk { resolution: r, .. } => *r = resolution,
        }
        d
    }
}

#[derive(Debug)]
struct GridData {
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
    interior: Vec<bool>,
    interior_count: usize,
    psi: Option<Vec<f64>>,
    descriptor: DomainDescriptor,
}

/// Immutable uniform lattice; clones share the underlying data.
#[derive(Debug, Clone)]
pub struct Grid2D {
    data: Arc<GridData>,
}

impl Grid2D {
    /// Uniform lattice over an axis-aligned rectangle. The one-node-deep
    /// boundary layer is masked out. `resolution` is nodes per unit length
    /// (so a unit square at resolution 9 has 9x9 nodes and h = 1/8).
    pub fn build_rectangle(
        origin: (f64, f64),
        size: (f64, f64),
        resolution: usize,
    ) -> Result<Grid2D> {
        let (width, height) = size;
        if !(width > 0.0) || !(height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(invalid(format!(
                "rectangle size must be positive, got {width} x {height}"
            )));
        }
        if resolution < 4 {
            return Err(invalid(format!(
                "resolution must be at least 4 nodes per unit, got {resolution}"
            )));
        }
        let h = 1.0 / (resolution - 1) as f64;
        let nx = (width / h).round() as usize + 1;
        let ny = (height / h).round() as usize + 1;
        if nx < 4 || ny < 4 {
            return Err(invalid(format!(
                "grid of {nx} x {ny} nodes is too coarse; need at least 4 per axis"
            )));
        }
        let mut interior = vec![false; nx * ny];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                interior[j * nx + i] = true;
            }
        }
        let interior_count = interior.iter().filter(|&&b| b).count();
        Ok(Grid2D {
            data: Arc::new(GridData {
                nx,
                ny,
                h,
                origin,
                interior,
                interior_count,
                psi: None,
                descriptor: DomainDescriptor::Rectangle {
                    origin: [origin.0, origin.1],
                    size: [width, height],
                    resolution,
                },
            }),
        })
    }

    /// Lattice over the bounding box of a disk, interior mask set at nodes
    /// with `|x - center| < radius - h/2`. The half-cell margin keeps every
    /// interior node's neighbours inside the box while placing the effective
    /// Dirichlet ring as close to the circle as the lattice allows.
    pub fn build_disk(center: (f64, f64), radius: f64, resolution: usize) -> Result<Grid2D> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(invalid(format!("disk radius must be positive, got {radius}")));
        }
        if resolution < 4 {
            return Err(invalid(format!(
                "resolution must be at least 4 nodes per unit, got {resolution}"
            )));
        }
        let h = 1.0 / (resolution - 1) as f64;
        if radius <= 2.0 * h {
            return Err(invalid(format!(
                "disk radius {radius} <= 2h = {} leaves an empty interior",
                2.0 * h
            )));
        }
        let half = (radius / h).ceil() as usize;
        let n = 2 * half + 1;
        let origin = (center.0 - half as f64 * h, center.1 - half as f64 * h);
        let mut interior = vec![false; n * n];
        let rin = radius - 0.5 * h;
        let mut interior_count = 0;
        for j in 0..n {
            for i in 0..n {
                let dx = (i as f64 - half as f64) * h;
                let dy = (j as f64 - half as f64) * h;
                if (dx * dx + dy * dy).sqrt() < rin {
                    interior[j * n + i] = true;
                    interior_count += 1;
                }
            }
        }
        if interior_count == 0 {
            return Err(invalid("disk interior is empty at this resolution".to_string()));
        }
        let grid = Grid2D {
            data: Arc::new(GridData {
                nx: n,
                ny: n,
                h,
                origin,
                interior,
                interior_count,
                psi: None,
                descriptor: DomainDescriptor::Disk {
                    center: [center.0, center.1],
                    radius,
                    resolution,
                },
            }),
        };
        debug_assert!(grid.interior_neighbours_in_bounds());
        Ok(grid)
    }

    /// Attach a conformal exponent so the grid represents `g = e^{2psi} delta`:
    /// the Laplace–Beltrami operator becomes `e^{-2psi}` times the flat one,
    /// the volume element `e^{2psi} dx`, and one-form norms pick up `e^{-2psi}`.
    pub fn with_conformal_factor(&self, psi: &ScalarField) -> Result<Grid2D> {
        if !self.same_lattice(psi.grid()) {
            return Err(invalid("conformal exponent sampled on a different lattice"));
        }
        if psi.values().iter().any(|v| !v.is_finite()) {
            return Err(invalid("conformal exponent contains non-finite values"));
        }
        let d = &self.data;
        Ok(Grid2D {
            data: Arc::new(GridData {
                nx: d.nx,
                ny: d.ny,
                h: d.h,
                origin: d.origin,
                interior: d.interior.clone(),
                interior_count: d.interior_count,
                psi: Some(psi.values().to_vec()),
                descriptor: d.descriptor.clone(),
            }),
        })
    }

    fn interior_neighbours_in_bounds(&self) -> bool {
        let (nx, ny) = (self.nx(), self.ny());
        for j in 0..ny {
            for i in 0..nx {
                if self.is_interior(i, j)
                    && (i == 0 || i == nx - 1 || j == 0 || j == ny - 1)
                {
                    return false;
                }
            }
        }
        true
    }

    pub fn nx(&self) -> usize {
        self.data.nx
    }

    pub fn ny(&self) -> usize {
        self.data.ny
    }

    pub fn node_count(&self) -> usize {
        self.data.nx * self.data.ny
    }

    pub fn h(&self) -> f64 {
        self.data.h
    }

    pub fn origin(&self) -> (f64, f64) {
        self.data.origin
    }

    pub fn descriptor(&self) -> &DomainDescriptor {
        &self.data.descriptor
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.data.nx && j < self.data.ny);
        j * self.data.nx + i
    }

    #[inline]
    pub fn pos(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.data.origin.0 + i as f64 * self.data.h,
            self.data.origin.1 + j as f64 * self.data.h,
        )
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.data.interior[self.idx(i, j)]
    }

    #[inline]
    pub fn is_interior_idx(&self, idx: usize) -> bool {
        self.data.interior[idx]
    }

    pub fn interior_mask(&self) -> &[bool] {
        &self.data.interior
    }

    pub fn interior_count(&self) -> usize {
        self.data.interior_count
    }

    pub fn conformal_exponent(&self) -> Option<&[f64]> {
        self.data.psi.as_deref()
    }

    /// `e^{2psi}` at a node (1 on flat grids): the volume factor of `dvol_g`.
    #[inline]
    pub fn vol_factor(&self, idx: usize) -> f64 {
        match &self.data.psi {
            Some(p) => (2.0 * p[idx]).exp(),
            None => 1.0,
        }
    }

    /// `e^{-2psi}` at a node (1 on flat grids): scales flat Laplacians and
    /// squared one-form norms into the metric `g`.
    #[inline]
    pub fn inv_metric_factor(&self, idx: usize) -> f64 {
        match &self.data.psi {
            Some(p) => (-2.0 * p[idx]).exp(),
            None => 1.0,
        }
    }

    /// True when the two grids share node positions (metric may differ).
    pub fn same_lattice(&self, other: &Grid2D) -> bool {
        self.data.nx == other.data.nx
            && self.data.ny == other.data.ny
            && self.data.h == other.data.h
            && self.data.origin == other.data.origin
    }

    /// Index of the node nearest to `p`, clamped into the box. Exact
    /// half-cell ties round down, so a point nudged off a node by `+h/2`
    /// still reports its original node as nearest.
    pub fn nearest_node(&self, p: (f64, f64)) -> (usize, usize) {
        let ti = (p.0 - self.data.origin.0) / self.data.h;
        let tj = (p.1 - self.data.origin.1) / self.data.h;
        (
            round_half_down(ti).clamp(0, self.data.nx as i64 - 1) as usize,
            round_half_down(tj).clamp(0, self.data.ny as i64 - 1) as usize,
        )
    }

    /// Apply the off-node rule: a requested point that lands on a lattice
    /// node is shifted by `+h/2` in both axes. Returns the effective point
    /// and whether the shift was applied.
    pub fn offset_off_node(&self, p: (f64, f64)) -> ((f64, f64), bool) {
        let h = self.data.h;
        let ti = (p.0 - self.data.origin.0) / h;
        let tj = (p.1 - self.data.origin.1) / h;
        let on_node = |t: f64| (t - t.round()).abs() < 1e-9;
        if on_node(ti) && on_node(tj) {
            ((p.0 + 0.5 * h, p.1 + 0.5 * h), true)
        } else {
            (p, false)
        }
    }

    /// True if `p` lies inside the lattice bounding box (closed).
    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (ox, oy) = self.data.origin;
        let w = (self.data.nx - 1) as f64 * self.data.h;
        let hgt = (self.data.ny - 1) as f64 * self.data.h;
        p.0 >= ox && p.0 <= ox + w && p.1 >= oy && p.1 <= oy + hgt
    }

    /// CSV dump `x,y,mask[,psi]` in row-major node order with 17 significant
    /// digits.
    pub fn dump_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let with_psi = self.data.psi.is_some();
        if with_psi {
            writeln!(out, "x,y,mask,psi")?;
        } else {
            writeln!(out, "x,y,mask")?;
        }
        for j in 0..self.data.ny {
            for i in 0..self.data.nx {
                let (x, y) = self.pos(i, j);
                let m = u8::from(self.data.interior[self.idx(i, j)]);
                if with_psi {
                    let psi = self.data.psi.as_ref().unwrap()[self.idx(i, j)];
                    writeln!(out, "{x:.16e},{y:.16e},{m},{psi:.16e}")?;
                } else {
                    writeln!(out, "{x:.16e},{y:.16e},{m}")?;
                }
            }
        }
        Ok(())
    }

    /// True when the masked-out region has a connected component that does
    /// not touch the bounding box: the interior then surrounds a hole and the
    /// domain is multiply connected.
    pub fn has_holes(&self) -> bool {
        let (nx, ny) = (self.nx(), self.ny());
        let mut seen = vec![false; nx * ny];
        let mut stack = Vec::new();
        // flood the exterior from the box edge
        for j in 0..ny {
            for i in 0..nx {
                if (i == 0 || i == nx - 1 || j == 0 || j == ny - 1)
                    && !self.data.interior[j * nx + i]
                    && !seen[j * nx + i]
                {
                    stack.push((i, j));
                    seen[j * nx + i] = true;
                }
            }
        }
        while let Some((i, j)) = stack.pop() {
            let mut push = |ii: usize, jj: usize, stack: &mut Vec<(usize, usize)>| {
                let k = jj * nx + ii;
                if !self.data.interior[k] && !seen[k] {
                    seen[k] = true;
                    stack.push((ii, jj));
                }
            };
            if i > 0 {
                push(i - 1, j, &mut stack);
            }
            if i + 1 < nx {
                push(i + 1, j, &mut stack);
            }
            if j > 0 {
                push(i, j - 1, &mut stack);
            }
            if j + 1 < ny {
                push(i, j + 1, &mut stack);
            }
        }
        self.data
            .interior
            .iter()
            .zip(&seen)
            .any(|(&int, &s)| !int && !s)
    }
}

fn round_half_down(t: f64) -> i64 {
    let f = t.floor();
    let frac = t - f;
    if frac > 0.5 + 1e-9 {
        f as i64 + 1
    } else {
        f as i64
    }
}

/// Exact Euclidean distance (in lattice cells) from every node to the set
/// marked `true`, via the two-pass separable transform of squared distances.
pub fn distance_to_set(grid: &Grid2D, in_set: &[bool]) -> Vec<f64> {
    assert_eq!(in_set.len(), grid.node_count());
    const INF: f64 = 1e20;
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut d = vec![INF; nx * ny];
    for (k, &s) in in_set.iter().enumerate() {
        if s {
            d[k] = 0.0;
        }
    }
    let mut row = vec![0.0; nx.max(ny)];
    // pass 1: along x
    for j in 0..ny {
        row[..nx].copy_from_slice(&d[j * nx..(j + 1) * nx]);
        dt1d(&mut row[..nx]);
        d[j * nx..(j + 1) * nx].copy_from_slice(&row[..nx]);
    }
    // pass 2: along y
    let mut col = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = d[j * nx + i];
        }
        dt1d(&mut col);
        for j in 0..ny {
            d[j * nx + i] = col[j];
        }
    }
    for v in &mut d {
        *v = v.sqrt();
    }
    d
}

/// One-dimensional squared-distance transform (lower envelope of parabolas).
fn dt1d(f: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -1e20;
    z[1] = 1e20;
    let fi = f.to_vec();
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((fi[q] + qf * qf) - (fi[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = 1e20;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        f[q] = (qf - p) * (qf - p) + fi[v[k]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_resolution_nine() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        assert_eq!((g.nx(), g.ny()), (9, 9));
        assert_eq!(g.interior_count(), 7 * 7);
        assert!((g.h() - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn tall_rectangle_has_square_cells() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 2.0), 8).unwrap();
        assert!((g.h() - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(g.nx(), 8);
        assert_eq!(g.ny(), 15); // ~ 2 * nx
    }

    #[test]
    fn coarse_resolution_rejected() {
        assert!(Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 3).is_err());
        assert!(Grid2D::build_rectangle((0.0, 0.0), (-1.0, 1.0), 9).is_err());
    }

    #[test]
    fn rebuild_is_deterministic() {
        let a = Grid2D::build_disk((0.0, 0.0), 1.0, 65).unwrap();
        let b = a.descriptor().build().unwrap();
        assert_eq!(a.interior_mask(), b.interior_mask());
        assert!(a.same_lattice(&b));
    }

    #[test]
    fn disk_interior_count_tracks_area() {
        let g = Grid2D::build_disk((0.0, 0.0), 1.0, 65).unwrap();
        let h = g.h();
        let oracle = std::f64::consts::PI * (1.0 - h) * (1.0 - h) / (h * h);
        let count = g.interior_count() as f64;
        assert!(
            (count - oracle).abs() / oracle < 0.03,
            "count {count} vs area estimate {oracle}"
        );
    }

    #[test]
    fn tiny_disk_rejected() {
        // h = 1/8, radius 0.2 <= 2h = 0.25
        assert!(Grid2D::build_disk((0.0, 0.0), 0.2, 9).is_err());
    }

    #[test]
    fn disk_mask_mirror_symmetric_about_lattice_center() {
        let g = Grid2D::build_disk((0.0, 0.0), 0.8, 33).unwrap();
        let (nx, ny) = (g.nx(), g.ny());
        for j in 0..ny {
            for i in 0..nx {
                assert_eq!(g.is_interior(i, j), g.is_interior(nx - 1 - i, j));
                assert_eq!(g.is_interior(i, j), g.is_interior(i, ny - 1 - j));
            }
        }
    }

    #[test]
    fn refining_changes_area_estimate_slowly() {
        let coarse = Grid2D::build_disk((0.0, 0.0), 1.0, 33).unwrap();
        let fine = Grid2D::build_disk((0.0, 0.0), 1.0, 65).unwrap();
        let a0 = coarse.interior_count() as f64 * coarse.h() * coarse.h();
        let a1 = fine.interior_count() as f64 * fine.h() * fine.h();
        assert!((a0 - a1).abs() < 8.0 * coarse.h());
    }

    #[test]
    fn interior_nodes_have_neighbours_in_bounds() {
        for g in [
            Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 17).unwrap(),
            Grid2D::build_disk((0.3, -0.2), 0.7, 33).unwrap(),
        ] {
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    if g.is_interior(i, j) {
                        assert!(i > 0 && i < g.nx() - 1 && j > 0 && j < g.ny() - 1);
                    }
                }
            }
        }
    }

    #[test]
    fn offset_rule_moves_only_lattice_points() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        let ((x, y), moved) = g.offset_off_node((0.25, 0.5));
        assert!(moved);
        assert!((x - 0.25 - g.h() / 2.0).abs() < 1e-15);
        assert!((y - 0.5 - g.h() / 2.0).abs() < 1e-15);
        let (_, moved) = g.offset_off_node((0.3, 0.5));
        assert!(!moved);
    }

    #[test]
    fn nearest_node_ties_round_down() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        // exact cell center between nodes (2,2) and (3,3)
        let p = (0.25 + g.h() / 2.0, 0.25 + g.h() / 2.0);
        assert_eq!(g.nearest_node(p), (2, 2));
        assert_eq!(g.nearest_node((0.26, 0.26)), (2, 2));
    }

    #[test]
    fn conformal_factor_requires_same_lattice() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        let other = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 17).unwrap();
        let psi = ScalarField::from_fn(&other, |_, _| 0.1);
        assert!(g.with_conformal_factor(&psi).is_err());
    }

    #[test]
    fn csv_dump_has_header_and_node_rows() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap();
        let mut buf = Vec::new();
        g.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x,y,mask");
        assert_eq!(text.lines().count(), 1 + g.node_count());
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 17).unwrap();
        let mut set = vec![false; g.node_count()];
        set[g.idx(3, 4)] = true;
        set[g.idx(12, 9)] = true;
        let d = distance_to_set(&g, &set);
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let brute = [(3.0f64, 4.0f64), (12.0, 9.0)]
                    .iter()
                    .map(|&(a, b)| ((i as f64 - a).powi(2) + (j as f64 - b).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!((d[g.idx(i, j)] - brute).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hole_detection() {
        let disk = Grid2D::build_disk((0.0, 0.0), 1.0, 33).unwrap();
        assert!(!disk.has_holes());
    }
}
