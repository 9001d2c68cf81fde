//! Node-sampled scalar fields and one-forms.
//!
//! A `ScalarField` stores one value per lattice node; a `OneForm` stores the
//! two coefficient fields of `a dx + b dy`. Both keep a handle to their grid.
//! CSV wire formats: `x,y,value` and `x,y,a,b`, row-major, 17 significant
//! digits.

use std::io::{BufRead, Write};

use crate::error::{invalid, Result};
use crate::grid::Grid2D;

#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D) -> ScalarField {
        ScalarField {
            grid: grid.clone(),
            values: vec![0.0; grid.node_count()],
        }
    }

    /// Sample `f(x, y)` at every node.
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut values = vec![0.0; grid.node_count()];
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.pos(i, j);
                values[grid.idx(i, j)] = f(x, y);
            }
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    /// Sample `f` at interior nodes, zero elsewhere (compactly supported
    /// fields live here).
    pub fn from_fn_interior(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        let mut values = vec![0.0; grid.node_count()];
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                if grid.is_interior(i, j) {
                    let (x, y) = grid.pos(i, j);
                    values[grid.idx(i, j)] = f(x, y);
                }
            }
        }
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_values(grid: &Grid2D, values: Vec<f64>) -> Result<ScalarField> {
        if values.len() != grid.node_count() {
            return Err(invalid(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field contains non-finite values"));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Rebind the samples to another grid over the same lattice (used to
    /// move a field between flat and conformal versions of a domain).
    pub fn on_grid(&self, grid: &Grid2D) -> Result<ScalarField> {
        if !self.grid.same_lattice(grid) {
            return Err(invalid("field rebind across different lattices"));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values: self.values.clone(),
        })
    }

    /// Flat L2 norm over interior nodes, `sqrt(sum v^2 h^2)`.
    pub fn l2_norm(&self) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let mask = self.grid.interior_mask();
        let s: f64 = self
            .values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v * v)
            .sum();
        (s * h2).sqrt()
    }

    pub fn linf_interior(&self) -> f64 {
        let mask = self.grid.interior_mask();
        self.values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        for (v, o) in self.values.iter_mut().zip(&other.values) {
            *v += c * o;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Bilinear interpolation at an arbitrary point inside the box.
    pub fn interp(&self, p: (f64, f64)) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let tx = ((p.0 - g.origin().0) / h).clamp(0.0, (g.nx() - 1) as f64);
        let ty = ((p.1 - g.origin().1) / h).clamp(0.0, (g.ny() - 1) as f64);
        let i0 = (tx.floor() as usize).min(g.nx() - 2);
        let j0 = (ty.floor() as usize).min(g.ny() - 2);
        let fx = tx - i0 as f64;
        let fy = ty - j0 as f64;
        let v00 = self.values[g.idx(i0, j0)];
        let v10 = self.values[g.idx(i0 + 1, j0)];
        let v01 = self.values[g.idx(i0, j0 + 1)];
        let v11 = self.values[g.idx(i0 + 1, j0 + 1)];
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    pub fn dump_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "x,y,value")?;
        let g = &self.grid;
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let (x, y) = g.pos(i, j);
                writeln!(out, "{x:.16e},{y:.16e},{:.16e}", self.values[g.idx(i, j)])?;
            }
        }
        Ok(())
    }

    pub fn load_csv(grid: &Grid2D, input: &mut dyn BufRead) -> Result<ScalarField> {
        let cols = read_csv_columns(grid, input, &["x", "y", "value"])?;
        ScalarField::from_values(grid, cols.into_iter().next().unwrap())
    }
}

#[derive(Debug, Clone)]
pub struct OneForm {
    grid: Grid2D,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl OneForm {
    pub fn zeros(grid: &Grid2D) -> OneForm {
        OneForm {
            grid: grid.clone(),
            a: vec![0.0; grid.node_count()],
            b: vec![0.0; grid.node_count()],
        }
    }

    /// Sample analytic coefficients at every node.
    pub fn from_fns(
        grid: &Grid2D,
        fa: impl Fn(f64, f64) -> f64,
        fb: impl Fn(f64, f64) -> f64,
    ) -> OneForm {
        let mut a = vec![0.0; grid.node_count()];
        let mut b = vec![0.0; grid.node_count()];
        for j in 0..grid.ny() {
            for i in 0..grid.nx() {
                let (x, y) = grid.pos(i, j);
                a[grid.idx(i, j)] = fa(x, y);
                b[grid.idx(i, j)] = fb(x, y);
            }
        }
        OneForm {
            grid: grid.clone(),
            a,
            b,
        }
    }

    pub fn from_components(grid: &Grid2D, a: Vec<f64>, b: Vec<f64>) -> Result<OneForm> {
        if a.len() != grid.node_count() || b.len() != grid.node_count() {
            return Err(invalid("one-form component length mismatch"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("one-form contains non-finite values"));
        }
        Ok(OneForm {
            grid: grid.clone(),
            a,
            b,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    #[inline]
    pub fn norm_sq_at(&self, idx: usize) -> f64 {
        self.a[idx] * self.a[idx] + self.b[idx] * self.b[idx]
    }

    /// Flat L2 norm over interior nodes.
    pub fn l2_norm(&self) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let mask = self.grid.interior_mask();
        let mut s = 0.0;
        for (k, &m) in mask.iter().enumerate() {
            if m {
                s += self.norm_sq_at(k);
            }
        }
        (s * h2).sqrt()
    }

    pub fn axpy(&mut self, c: f64, other: &OneForm) {
        for (v, o) in self.a.iter_mut().zip(&other.a) {
            *v += c * o;
        }
        for (v, o) in self.b.iter_mut().zip(&other.b) {
            *v += c * o;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.a.iter_mut().chain(self.b.iter_mut()) {
            *v *= c;
        }
    }

    pub fn on_grid(&self, grid: &Grid2D) -> Result<OneForm> {
        if !self.grid.same_lattice(grid) {
            return Err(invalid("one-form rebind across different lattices"));
        }
        Ok(OneForm {
            grid: grid.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
        })
    }

    pub fn dump_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "x,y,a,b")?;
        let g = &self.grid;
        for j in 0..g.ny() {
            for i in 0..g.nx() {
                let (x, y) = g.pos(i, j);
                let k = g.idx(i, j);
                writeln!(out, "{x:.16e},{y:.16e},{:.16e},{:.16e}", self.a[k], self.b[k])?;
            }
        }
        Ok(())
    }

    pub fn load_csv(grid: &Grid2D, input: &mut dyn BufRead) -> Result<OneForm> {
        let mut cols = read_csv_columns(grid, input, &["x", "y", "a", "b"])?;
        let b = cols.pop().unwrap();
        let a = cols.pop().unwrap();
        OneForm::from_components(grid, a, b)
    }
}

/// Parse a node-per-row CSV with the given header, checking the coordinate
/// columns against the grid lattice. Returns the non-coordinate columns.
fn read_csv_columns(
    grid: &Grid2D,
    input: &mut dyn BufRead,
    header: &[&str],
) -> Result<Vec<Vec<f64>>> {
    let expected_header = header.join(",");
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| invalid("empty CSV"))?
        .map_err(|e| invalid(format!("CSV read error: {e}")))?;
    if first.trim() != expected_header {
        return Err(invalid(format!(
            "CSV header mismatch: expected `{expected_header}`, got `{}`",
            first.trim()
        )));
    }
    let ncols = header.len() - 2;
    let mut cols = vec![vec![0.0; grid.node_count()]; ncols];
    let mut count = 0usize;
    let tol = 1e-9 * grid.h().max(1.0);
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| invalid(format!("CSV read error: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        if count >= grid.node_count() {
            return Err(invalid("CSV has more rows than grid nodes"));
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != header.len() {
            return Err(invalid(format!("CSV row {row} has {} fields", parts.len())));
        }
        let mut nums = [0.0f64; 8];
        for (k, p) in parts.iter().enumerate() {
            nums[k] = p
                .trim()
                .parse::<f64>()
                .map_err(|e| invalid(format!("CSV row {row}: {e}")))?;
        }
        let i = count % grid.nx();
        let j = count / grid.nx();
        let (x, y) = grid.pos(i, j);
        if (nums[0] - x).abs() > tol || (nums[1] - y).abs() > tol {
            return Err(invalid(format!(
                "CSV row {row} coordinates ({}, {}) do not match grid node ({x}, {y})",
                nums[0], nums[1]
            )));
        }
        for c in 0..ncols {
            cols[c][count] = nums[2 + c];
        }
        count += 1;
    }
    if count != grid.node_count() {
        return Err(invalid(format!(
            "CSV has {count} rows for a grid of {} nodes",
            grid.node_count()
        )));
    }
    Ok(cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    fn grid() -> Grid2D {
        Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 9).unwrap()
    }

    #[test]
    fn from_values_validates() {
        let g = grid();
        assert!(ScalarField::from_values(&g, vec![0.0; 3]).is_err());
        assert!(ScalarField::from_values(&g, vec![f64::NAN; g.node_count()]).is_err());
        assert!(ScalarField::from_values(&g, vec![1.0; g.node_count()]).is_ok());
    }

    #[test]
    fn scalar_csv_round_trip() {
        let g = grid();
        let f = ScalarField::from_fn(&g, |x, y| x * x - 0.37 * y);
        let mut buf = Vec::new();
        f.dump_csv(&mut buf).unwrap();
        let back = ScalarField::load_csv(&g, &mut BufReader::new(&buf[..])).unwrap();
        for (u, v) in f.values().iter().zip(back.values()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn one_form_csv_round_trip_and_mismatch() {
        let g = grid();
        let w = OneForm::from_fns(&g, |x, _| x, |_, y| -y);
        let mut buf = Vec::new();
        w.dump_csv(&mut buf).unwrap();
        let back = OneForm::load_csv(&g, &mut BufReader::new(&buf[..])).unwrap();
        assert!((back.a()[5] - w.a()[5]).abs() < 1e-14);

        let other = Grid2D::build_rectangle((0.0, 0.0), (1.0, 1.0), 17).unwrap();
        assert!(OneForm::load_csv(&other, &mut BufReader::new(&buf[..])).is_err());
    }

    #[test]
    fn interp_reproduces_bilinear_values() {
        let g = grid();
        let f = ScalarField::from_fn(&g, |x, y| 2.0 * x + 3.0 * y);
        // bilinear interpolation is exact on affine functions
        assert!((f.interp((0.3141, 0.2718)) - (2.0 * 0.3141 + 3.0 * 0.2718)).abs() < 1e-13);
    }
}
