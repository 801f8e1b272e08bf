//! Uniform grids, grid functions and finite-difference calculus.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Domain, SymMatrix};

/// Isotropic uniform grid in dimension 1 or 2. Node `(i, j)` has index `i + nx * j`
/// and coordinates `lo + h * (i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianGrid {
    dim: usize,
    lo: [f64; 2],
    h: f64,
    counts: [usize; 2],
}

impl CartesianGrid {
    /// `counts` are node counts per axis (`counts[1]` is ignored in 1D).
    pub fn new(dim: usize, lo: [f64; 2], h: f64, counts: [usize; 2]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing h = {h}")));
        }
        let counts = if dim == 1 { [counts[0], 1] } else { counts };
        if counts[..dim].iter().any(|&c| c < 3) {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes per axis, got {counts:?}")));
        }
        Ok(Self { dim, lo, h, counts })
    }

    /// Grid covering the bounding box of `domain` with `cells` intervals along the
    /// first axis. The second axis must be an integer multiple of `h`.
    pub fn for_domain(domain: &Domain, cells: usize) -> Result<Self> {
        domain.validate()?;
        if cells < 2 {
            return Err(Error::InvalidGrid(format!("{cells} cells")));
        }
        let (lo, hi) = domain.bounding_box();
        let h = (hi[0] - lo[0]) / cells as f64;
        let mut counts = [cells + 1, 1];
        if domain.dim == 2 {
            let m = (hi[1] - lo[1]) / h;
            let mr = m.round();
            if (m - mr).abs() > 1e-9 * m.max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "second axis length {} is not a multiple of h = {h}",
                    hi[1] - lo[1]
                )));
            }
            counts[1] = mr as usize + 1;
        }
        Self::new(domain.dim, lo, h, counts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn lo(&self) -> [f64; 2] {
        self.lo
    }

    pub fn counts(&self) -> [usize; 2] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one cell, `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.counts[0] * j
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.counts[0], node / self.counts[0])
    }

    #[inline]
    pub fn coord(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.ij(node);
        [
            self.lo[0] + self.h * i as f64,
            if self.dim == 2 { self.lo[1] + self.h * j as f64 } else { 0.0 },
        ]
    }

    /// Node on the outer layer of the grid.
    #[inline]
    pub fn is_edge(&self, node: usize) -> bool {
        let (i, j) = self.ij(node);
        let ex = i == 0 || i + 1 == self.counts[0];
        if self.dim == 1 {
            ex
        } else {
            ex || j == 0 || j + 1 == self.counts[1]
        }
    }

    /// Nearest node to `x`, clamped to the grid.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx = |k: usize| {
            let t = ((x[k] - self.lo[k]) / self.h).round();
            t.clamp(0.0, (self.counts[k] - 1) as f64) as usize
        };
        if self.dim == 1 {
            idx(0)
        } else {
            self.index(idx(0), idx(1))
        }
    }

    /// Coarse grid with spacing `2h`, if every axis has an even number of cells.
    pub fn coarsened(&self) -> Option<Self> {
        let ok = self.counts[..self.dim].iter().all(|&c| (c - 1) % 2 == 0 && (c - 1) / 2 >= 2);
        if !ok {
            return None;
        }
        let mut counts = [(self.counts[0] - 1) / 2 + 1, 1];
        if self.dim == 2 {
            counts[1] = (self.counts[1] - 1) / 2 + 1;
        }
        Self::new(self.dim, self.lo, 2.0 * self.h, counts).ok()
    }

    /// Node index ranges `(i0..=i1, j0..=j1)` covering the closed ball.
    fn ball_bounds(&self, center: &[f64; 2], r: f64) -> Option<[(usize, usize); 2]> {
        let mut out = [(0, 0); 2];
        for k in 0..self.dim {
            let a = ((center[k] - r - self.lo[k]) / self.h).ceil() - 1.0;
            let b = ((center[k] + r - self.lo[k]) / self.h).floor() + 1.0;
            let max = (self.counts[k] - 1) as f64;
            if b < 0.0 || a > max {
                return None;
            }
            out[k] = (a.max(0.0) as usize, b.min(max) as usize);
        }
        Some(out)
    }

    /// Nodes with `|x - center| <= radius` (relative slack `1e-12`), in index order.
    pub fn nodes_in_ball(&self, ball: &BallRegion) -> Vec<usize> {
        let mut out = Vec::new();
        let Some(b) = self.ball_bounds(&ball.center, ball.radius) else {
            return out;
        };
        let r2 = (ball.radius * (1.0 + 1e-12)).powi(2);
        for j in b[1].0..=b[1].1 {
            for i in b[0].0..=b[0].1 {
                let node = self.index(i, j);
                if ball.dist2(&self.coord(node)) <= r2 {
                    out.push(node);
                }
            }
        }
        out
    }
}

/// Closed ball `B_radius(center)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallRegion {
    pub center: [f64; 2],
    pub radius: f64,
}

impl BallRegion {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::EmptyBall {
                center: center.to_vec(),
                radius,
            });
        }
        Ok(Self { center, radius })
    }

    #[inline]
    fn dist2(&self, x: &[f64; 2]) -> f64 {
        (x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2)
    }
}

/// A grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: CartesianGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: CartesianGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "{} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Unstable { node, sweep: 0 });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: CartesianGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let n = grid.dim();
        let values = (0..grid.len()).map(|k| f(&grid.coord(k)[..n])).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: CartesianGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| s * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Multilinear interpolation at `x`; `None` outside the grid box.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..g.dim {
            let t = (x[k] - g.lo[k]) / g.h;
            let last = (g.counts[k] - 1) as f64;
            if !(t >= -1e-9 && t <= last + 1e-9) {
                return None;
            }
            let t = t.clamp(0.0, last);
            let i = (t.floor() as usize).min(g.counts[k] - 2);
            base[k] = i;
            frac[k] = t - i as f64;
        }
        let at = |i: usize, j: usize| self.values[g.index(i, j)];
        let [i, j] = base;
        let [fx, fy] = frac;
        if g.dim == 1 {
            return Some((1.0 - fx) * at(i, 0) + fx * at(i + 1, 0));
        }
        Some(
            (1.0 - fy) * ((1.0 - fx) * at(i, j) + fx * at(i + 1, j))
                + fy * ((1.0 - fx) * at(i, j + 1) + fx * at(i + 1, j + 1)),
        )
    }

    /// Nearest-node restriction to the dyadic coarse grid.
    pub fn restrict(&self) -> Option<Self> {
        let coarse = self.grid.coarsened()?;
        let values = (0..coarse.len())
            .map(|k| {
                let (i, j) = coarse.ij(k);
                self.values[self.grid.index(2 * i, 2 * j)]
            })
            .collect();
        Some(Self {
            grid: coarse,
            values,
        })
    }

    /// CSV with header `i,j,x1,x2,value` (`i,x1,value` in 1D).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let g = &self.grid;
        let header: &[&str] = if g.dim() == 1 {
            &["i", "x1", "value"]
        } else {
            &["i", "j", "x1", "x2", "value"]
        };
        wr.write_record(header).map_err(csv_err)?;
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = g.ij(k);
            let x = g.coord(k);
            let row = if g.dim() == 1 {
                vec![i.to_string(), format!("{:?}", x[0]), format!("{v:?}")]
            } else {
                vec![
                    i.to_string(),
                    j.to_string(),
                    format!("{:?}", x[0]),
                    format!("{:?}", x[1]),
                    format!("{v:?}"),
                ]
            };
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the format of [`ScalarField::write_csv`] onto a known grid.
    pub fn read_csv<R: Read>(grid: CartesianGrid, r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = vec![false; grid.len()];
        let n = grid.dim();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Format(format!("row has {} columns", rec.len())))
            };
            let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("{s}: {e}")));
            let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s}: {e}")));
            let i = parse_u(field(0)?)?;
            let j = if n == 2 { parse_u(field(1)?)? } else { 0 };
            if i >= grid.counts()[0] || j >= grid.counts()[1] {
                return Err(Error::Format(format!("node ({i}, {j}) outside the grid")));
            }
            let node = grid.index(i, j);
            let x = grid.coord(node);
            for k in 0..n {
                let xc = parse_f(field(n + k)?)?;
                if (xc - x[k]).abs() > 1e-9 * (1.0 + x[k].abs()) {
                    return Err(Error::Format(format!("coordinate mismatch at node ({i}, {j})")));
                }
            }
            values[node] = parse_f(field(2 * n)?)?;
            seen[node] = true;
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(Error::Format(format!("node {node} missing from CSV")));
        }
        Self::new(grid, values)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Central differences in the interior, first-order one-sided differences on
/// the outer layer. Entries beyond the grid dimension are zero.
pub fn gradient(field: &ScalarField, node: usize) -> [f64; 2] {
    let g = field.grid();
    let (i, j) = g.ij(node);
    let u = field.values();
    let h = g.h();
    let axis = |pos: usize, count: usize, at: &dyn Fn(usize) -> usize| -> f64 {
        if pos == 0 {
            (u[at(1)] - u[at(0)]) / h
        } else if pos + 1 == count {
            (u[at(pos)] - u[at(pos - 1)]) / h
        } else {
            (u[at(pos + 1)] - u[at(pos - 1)]) / (2.0 * h)
        }
    };
    let gx = axis(i, g.counts()[0], &|ii| g.index(ii, j));
    let gy = if g.dim() == 2 {
        axis(j, g.counts()[1], &|jj| g.index(i, jj))
    } else {
        0.0
    };
    [gx, gy]
}

/// Second differences (3-point per axis, 4-point cross stencil for the mixed term).
pub fn hessian(field: &ScalarField, node: usize) -> Result<SymMatrix> {
    let g = field.grid();
    if g.is_edge(node) {
        return Err(Error::BoundaryNode { node });
    }
    let u = field.values();
    let h2 = g.h() * g.h();
    let nx = g.counts()[0];
    let c = u[node];
    let uxx = (u[node + 1] - 2.0 * c + u[node - 1]) / h2;
    if g.dim() == 1 {
        return Ok(SymMatrix::diag(&[uxx]));
    }
    let uyy = (u[node + nx] - 2.0 * c + u[node - nx]) / h2;
    let uxy = (u[node + nx + 1] - u[node + nx - 1] - u[node - nx + 1] + u[node - nx - 1]) / (4.0 * h2);
    Ok(SymMatrix::sym2(uxx, uxy, uyy))
}

/// `|grad u|^2` as the mean of squared forward and backward differences per
/// axis. Unlike the central difference it does not vanish at a crease.
pub fn gradient_norm_sq(field: &ScalarField, node: usize) -> Result<f64> {
    let g = field.grid();
    if g.is_edge(node) {
        return Err(Error::BoundaryNode { node });
    }
    let u = field.values();
    let h2 = g.h() * g.h();
    let c = u[node];
    let axis = |step: usize| {
        let (f, b) = (u[node + step] - c, c - u[node - step]);
        (f * f + b * b) / (2.0 * h2)
    };
    Ok(if g.dim() == 2 { axis(1) + axis(g.counts()[0]) } else { axis(1) })
}

/// `(uxx, uyy, xp, xm)` with the one-diagonal mixed differences of
/// [`crate::model::OperatorKind::apply2_monotone`]; the last three vanish in 1D.
pub fn split_second_differences(field: &ScalarField, node: usize) -> Result<[f64; 4]> {
    let g = field.grid();
    if g.is_edge(node) {
        return Err(Error::BoundaryNode { node });
    }
    let u = field.values();
    let h2 = g.h() * g.h();
    let c = u[node];
    let (e, w) = (u[node + 1], u[node - 1]);
    if g.dim() == 1 {
        return Ok([(e + w - 2.0 * c) / h2, 0.0, 0.0, 0.0]);
    }
    let nx = g.counts()[0];
    let (n, s) = (u[node + nx], u[node - nx]);
    let cross = e + w + n + s;
    Ok([
        (e + w - 2.0 * c) / h2,
        (n + s - 2.0 * c) / h2,
        (u[node + nx + 1] + u[node - nx - 1] + 2.0 * c - cross) / (2.0 * h2),
        -(u[node + nx - 1] + u[node - nx + 1] + 2.0 * c - cross) / (2.0 * h2),
    ])
}

/// Maximum of the field over nodes in the closed ball.
pub fn sup_over_ball(field: &ScalarField, ball: &BallRegion) -> Result<f64> {
    let nodes = field.grid().nodes_in_ball(ball);
    if nodes.is_empty() {
        return Err(Error::EmptyBall {
            center: ball.center[..field.grid().dim()].to_vec(),
            radius: ball.radius,
        });
    }
    Ok(nodes.iter().map(|&k| field.get(k)).fold(f64::NEG_INFINITY, f64::max))
}

const PAIR_OFFSETS_2D: [(isize, isize); 6] = [(1, 0), (0, 1), (2, 0), (0, 2), (1, 1), (1, -1)];
const PAIR_OFFSETS_1D: [(isize, isize); 2] = [(1, 0), (2, 0)];

/// Largest difference quotient `|u(x) - u(y)| / |x - y|` over node pairs at graph
/// distance at most 2 (axis steps of 1 and 2 and the two diagonals), both nodes
/// inside `region` (or anywhere when `None`). A lower bound of the full pairwise
/// seminorm that is tight for smooth fields.
pub fn lipschitz_seminorm(field: &ScalarField, region: Option<&BallRegion>) -> f64 {
    let g = field.grid();
    let nodes: Vec<usize> = match region {
        Some(b) => g.nodes_in_ball(b),
        None => (0..g.len()).collect(),
    };
    let inside = |node: usize| match region {
        Some(b) => b.dist2(&g.coord(node)) <= (b.radius * (1.0 + 1e-12)).powi(2),
        None => true,
    };
    let offsets: &[(isize, isize)] = if g.dim() == 1 { &PAIR_OFFSETS_1D } else { &PAIR_OFFSETS_2D };
    let [nx, ny] = g.counts();
    let mut best: f64 = 0.0;
    for &k in &nodes {
        let (i, j) = g.ij(k);
        for &(di, dj) in offsets {
            let (ii, jj) = (i as isize + di, j as isize + dj);
            if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                continue;
            }
            let other = g.index(ii as usize, jj as usize);
            if !inside(other) {
                continue;
            }
            let dist = g.h() * ((di * di + dj * dj) as f64).sqrt();
            best = best.max((field.get(k) - field.get(other)).abs() / dist);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_reproduces_bilinear_functions() {
        let g = CartesianGrid::for_domain(&Domain::square(1.0), 8).unwrap();
        let f = ScalarField::from_fn(g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]).unwrap();
        for x in [[0.13, -0.71], [1.0, 1.0], [-1.0, 0.33], [0.0, 0.0]] {
            let v = f.interpolate(&x).unwrap();
            assert!((v - (1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1])).abs() < 1e-13);
        }
        assert!(f.interpolate(&[1.1, 0.0]).is_none());
    }

    #[test]
    fn split_differences_and_gradient_modulus() {
        let g = CartesianGrid::for_domain(&Domain::square(1.0), 8).unwrap();
        let quad = ScalarField::from_fn(g, |x| 1.5 * x[0] * x[0] - 0.75 * x[0] * x[1] + 0.5 * x[1] * x[1]).unwrap();
        let lin = ScalarField::from_fn(g, |x| 2.0 * x[0] - 3.0 * x[1]).unwrap();
        let crease = ScalarField::from_fn(g, |x| x[0].abs()).unwrap();
        let k = g.index(4, 3);
        let [dxx, dyy, xp, xm] = split_second_differences(&quad, k).unwrap();
        for (got, want) in [(dxx, 3.0), (dyy, 1.0), (xp, -0.75), (xm, -0.75)] {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((gradient_norm_sq(&lin, k).unwrap() - 13.0).abs() < 1e-12);
        // the central difference vanishes on the crease, the mean of one-sided ones does not
        let c = g.index(4, 4);
        assert_eq!(gradient(&crease, c)[0], 0.0);
        assert!((gradient_norm_sq(&crease, c).unwrap() - 1.0).abs() < 1e-12);
        assert!(gradient_norm_sq(&lin, 0).is_err());
    }

    use proptest::prelude::*;

    fn grid(cells: usize) -> CartesianGrid {
        CartesianGrid::for_domain(&Domain::square(1.0), cells).unwrap()
    }

    #[test]
    fn index_arithmetic_round_trips() {
        let g = grid(8);
        assert_eq!(g.len(), 81);
        assert_eq!(g.h(), 0.25);
        for k in 0..g.len() {
            let (i, j) = g.ij(k);
            assert_eq!(g.index(i, j), k);
            assert_eq!(g.nearest(&g.coord(k)), k);
        }
        assert!(CartesianGrid::for_domain(
            &Domain { dim: 2, kind: crate::model::DomainKind::Box, extent: vec![0.0, 1.0, 0.0, 0.3] },
            4
        )
        .is_err());
    }

    #[test]
    fn stencils_exact_on_polynomials() {
        let g = grid(8);
        let c = ScalarField::constant(g, 3.0);
        let lin = ScalarField::from_fn(g, |x| x[0]).unwrap();
        let quad = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]).unwrap();
        let bil = ScalarField::from_fn(g, |x| x[0] * x[1]).unwrap();
        for k in 0..g.len() {
            assert_eq!(gradient(&c, k), [0.0, 0.0]);
            let gl = gradient(&lin, k);
            assert!((gl[0] - 1.0).abs() < 1e-14 && gl[1] == 0.0);
            if g.is_edge(k) {
                assert!(matches!(hessian(&quad, k), Err(Error::BoundaryNode { .. })));
                continue;
            }
            let hq = hessian(&quad, k).unwrap();
            assert!((hq.get(0, 0) - 2.0).abs() < 1e-12 && (hq.get(1, 1) - 2.0).abs() < 1e-12);
            assert!(hq.get(0, 1).abs() < 1e-12);
            let hb = hessian(&bil, k).unwrap();
            assert!((hb.get(0, 1) - 1.0).abs() < 1e-12 && hb.get(0, 0).abs() < 1e-12);
            assert_eq!(hessian(&c, k).unwrap(), SymMatrix::zeros(2));
        }
        let k = g.nearest(&[0.5, 0.0]);
        assert_eq!(gradient(&quad, k), [1.0, 0.0]);
    }

    #[test]
    fn one_dimensional_grid() {
        let g = CartesianGrid::for_domain(&Domain::interval(0.0, 1.0), 10).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] * x[0]).unwrap();
        let hs = hessian(&f, 5).unwrap();
        assert!((hs.get(0, 0) - 2.0).abs() < 1e-10);
        assert!((gradient(&f, 5)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_supremum() {
        let g = grid(16);
        let r = ScalarField::from_fn(g, |x| x[0].hypot(x[1])).unwrap();
        let s = sup_over_ball(&r, &BallRegion::new([0.0; 2], 0.5).unwrap()).unwrap();
        assert!(s <= 0.5 + 1e-12 && s >= 0.5 - g.h());
        assert_eq!(sup_over_ball(&r, &BallRegion::new([0.0; 2], 10.0).unwrap()).unwrap(), r.max());
        let c = ScalarField::constant(g, 2.5);
        assert_eq!(sup_over_ball(&c, &BallRegion::new([0.3, 0.1], 0.2).unwrap()).unwrap(), 2.5);
        let far = BallRegion::new([5.0, 5.0], 0.1).unwrap();
        assert!(matches!(sup_over_ball(&c, &far), Err(Error::EmptyBall { .. })));
        let between = BallRegion::new([0.06, 0.06], 0.01).unwrap();
        assert!(sup_over_ball(&c, &between).is_err());
    }

    #[test]
    fn seminorm_examples() {
        let g = grid(32);
        assert_eq!(lipschitz_seminorm(&ScalarField::constant(g, 1.0), None), 0.0);
        let lin = ScalarField::from_fn(g, |x| 3.0 * x[0]).unwrap();
        assert!((lipschitz_seminorm(&lin, None) - 3.0).abs() < 1e-12);
        let quartic = ScalarField::from_fn(g, |x| (x[0] * x[0] + x[1] * x[1]).powi(2)).unwrap();
        let ball = BallRegion::new([0.0; 2], 0.25).unwrap();
        let s = lipschitz_seminorm(&quartic, Some(&ball));
        // d/dr r^4 = 4 r^3 is largest at the rim; pair quotients sit just below it
        let rim = 4.0 * 0.25f64.powi(3);
        assert!(s <= rim * 1.0001 && s >= 4.0 * (0.25 - 2.0 * g.h()).powi(3), "{s} vs {rim}");
    }

    #[test]
    fn csv_round_trip() {
        let g = grid(4);
        let f = ScalarField::from_fn(g, |x| x[0] * 0.1 + x[1].powi(3) / 3.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("i,j,x1,x2,value\n"));
        let back = ScalarField::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert!(ScalarField::read_csv(g, "i,j,x1,x2,value\n0,0,-1.0,-1.0,2.0\n".as_bytes()).is_err());
    }

    #[test]
    fn restriction_takes_even_nodes() {
        let g = grid(8);
        let f = ScalarField::from_fn(g, |x| x[0] + 10.0 * x[1]).unwrap();
        let c = f.restrict().unwrap();
        assert_eq!(c.grid().h(), 0.5);
        for k in 0..c.grid().len() {
            let x = c.grid().coord(k);
            assert!((c.get(k) - (x[0] + 10.0 * x[1])).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn sup_monotone_in_radius_and_field(cx in -1.0f64..1.0, cy in -1.0f64..1.0, r in 0.3f64..1.0,
                                            dr in 0.0f64..0.5, shift in 0.0f64..1.0, alpha in -3.0f64..3.0) {
            let g = grid(16);
            let f = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] * x[1]).unwrap();
            let f2 = f.map(|v| v + shift).unwrap();
            let b1 = BallRegion::new([cx, cy], r).unwrap();
            let b2 = BallRegion::new([cx, cy], r + dr).unwrap();
            let s1 = sup_over_ball(&f, &b1).unwrap();
            prop_assert!(s1 <= sup_over_ball(&f, &b2).unwrap());
            prop_assert!(s1 <= sup_over_ball(&f2, &b1).unwrap());
            let l = lipschitz_seminorm(&f, Some(&b2));
            let la = lipschitz_seminorm(&f.scaled(alpha), Some(&b2));
            prop_assert!((la - alpha.abs() * l).abs() <= 1e-12 * (1.0 + la));
        }
    }
}
