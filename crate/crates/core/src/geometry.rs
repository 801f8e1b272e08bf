//! Dead core, free boundary, positive density and box-counting dimension of
//! a discrete solution.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{csv_err, BallRegion, CartesianGrid, ScalarField};
use crate::model::{beta_exponent, Domain, ExponentTriple};
use crate::stats::line_fit;

/// `max(10 tol^(1/(1+p-mu)), h^beta)`: above the error a residual of size `tol`
/// can leave, below the growth `r^beta` at one cell.
pub fn default_zero_threshold(exponents: ExponentTriple, tol_residual: f64, h: f64) -> Result<f64> {
    let d = beta_exponent(exponents)?;
    let ExponentTriple { p, mu, .. } = exponents;
    Ok((10.0 * tol_residual.max(0.0).powf(1.0 / (1.0 + p - mu))).max(h.powf(d.beta)))
}

/// Nodes whose value is at most the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadCoreSet {
    grid: CartesianGrid,
    mask: Vec<bool>,
    pub zero_threshold: f64,
}

pub fn extract_dead_core(field: &ScalarField, threshold: f64) -> Result<DeadCoreSet> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Precondition(format!("zero threshold {threshold} must be positive")));
    }
    Ok(DeadCoreSet {
        grid: *field.grid(),
        mask: field.values().iter().map(|&v| v <= threshold).collect(),
        zero_threshold: threshold,
    })
}

impl DeadCoreSet {
    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_dead(&self, node: usize) -> bool {
        self.mask[node]
    }

    pub fn dead_count(&self) -> usize {
        self.mask.iter().filter(|&&d| d).count()
    }

    pub fn positive_count(&self) -> usize {
        self.mask.len() - self.dead_count()
    }

    /// Dead nodes off the outer grid layer.
    pub fn interior_dead_count(&self) -> usize {
        (0..self.mask.len()).filter(|&k| self.mask[k] && !self.grid.is_edge(k)).count()
    }

    /// Axis neighbours of a node.
    fn neighbours(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let g = &self.grid;
        let (i, j) = g.ij(node);
        let [nx, ny] = g.counts();
        let mut out = Vec::with_capacity(4);
        if i > 0 {
            out.push(g.index(i - 1, j));
        }
        if i + 1 < nx {
            out.push(g.index(i + 1, j));
        }
        if g.dim() == 2 {
            if j > 0 {
                out.push(g.index(i, j - 1));
            }
            if j + 1 < ny {
                out.push(g.index(i, j + 1));
            }
        }
        out.into_iter()
    }

    /// Whether the indicator changes between `node` and one of its axis neighbours.
    pub fn on_interface(&self, node: usize) -> bool {
        self.neighbours(node).any(|k| self.mask[k] != self.mask[node])
    }

    /// CSV of dead nodes: `i,j,x1,x2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let nodes: Vec<usize> = (0..self.mask.len()).filter(|&k| self.mask[k]).collect();
        write_nodes(&self.grid, &nodes, None, w)
    }
}

fn write_nodes<W: Write>(grid: &CartesianGrid, nodes: &[usize], side: Option<&[&str]>, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["i", "j", "x1", "x2"];
    if side.is_some() {
        header.push("side");
    }
    wr.write_record(&header).map_err(csv_err)?;
    for (n, &k) in nodes.iter().enumerate() {
        let (i, j) = grid.ij(k);
        let x = grid.coord(k);
        let mut row = vec![i.to_string(), j.to_string(), format!("{:?}", x[0]), format!("{:?}", x[1])];
        if let Some(s) = side {
            row.push(s[n].to_string());
        }
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Nodes on either side of the indicator change, in index order.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeBoundarySet {
    grid: CartesianGrid,
    /// Positive nodes with a dead axis neighbour.
    pub positive_side: Vec<usize>,
    /// Dead nodes with a positive axis neighbour.
    pub dead_side: Vec<usize>,
}

pub fn free_boundary(dead: &DeadCoreSet) -> FreeBoundarySet {
    let mut positive_side = Vec::new();
    let mut dead_side = Vec::new();
    for k in 0..dead.mask.len() {
        if dead.on_interface(k) {
            if dead.mask[k] {
                dead_side.push(k);
            } else {
                positive_side.push(k);
            }
        }
    }
    FreeBoundarySet {
        grid: dead.grid,
        positive_side,
        dead_side,
    }
}

impl FreeBoundarySet {
    /// A node set given directly, e.g. for synthetic interfaces.
    pub fn from_nodes(grid: CartesianGrid, mut positive_side: Vec<usize>, mut dead_side: Vec<usize>) -> Self {
        positive_side.sort_unstable();
        positive_side.dedup();
        dead_side.sort_unstable();
        dead_side.dedup();
        Self {
            grid,
            positive_side,
            dead_side,
        }
    }

    pub fn grid(&self) -> &CartesianGrid {
        &self.grid
    }

    pub fn is_empty(&self) -> bool {
        self.positive_side.is_empty() && self.dead_side.is_empty()
    }

    /// Both sides merged, in index order.
    pub fn nodes(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.positive_side.iter().chain(&self.dead_side).copied().collect();
        all.sort_unstable();
        all
    }

    pub fn contains(&self, node: usize) -> bool {
        self.positive_side.binary_search(&node).is_ok() || self.dead_side.binary_search(&node).is_ok()
    }

    /// Dead-side nodes whose distance to the domain boundary is at least `margin`.
    pub fn interior_dead_side(&self, domain: &Domain, margin: f64) -> Vec<usize> {
        let n = self.grid.dim();
        self.dead_side
            .iter()
            .copied()
            .filter(|&k| domain.signed_distance(&self.grid.coord(k)[..n]) >= margin)
            .collect()
    }

    /// CSV `i,j,x1,x2,side` with side `positive` or `dead`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let nodes = self.nodes();
        let sides: Vec<&str> = nodes
            .iter()
            .map(|k| if self.dead_side.binary_search(k).is_ok() { "dead" } else { "positive" })
            .collect();
        write_nodes(&self.grid, &nodes, Some(&sides), w)
    }
}

/// Volume of the unit ball in dimension `n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 / 3.0 * std::f64::consts::PI,
        _ => panic!("dimension {n} not supported"),
    }
}

/// `#(positive nodes in B_r(x0)) * cell volume / r^n` at a free boundary node.
/// The ball must stay inside the domain and `r >= 3h`.
pub fn density_ratio(dead: &DeadCoreSet, domain: &Domain, x0: usize, r: f64) -> Result<f64> {
    let g = &dead.grid;
    let n = g.dim();
    if x0 >= g.len() || !dead.on_interface(x0) {
        return Err(Error::Precondition(format!("node {x0} is not a free boundary node")));
    }
    if r < 3.0 * g.h() * (1.0 - 1e-12) {
        return Err(Error::Precondition(format!("radius {r} below 3h = {}", 3.0 * g.h())));
    }
    let c = g.coord(x0);
    if domain.signed_distance(&c[..n]) < r * (1.0 - 1e-12) {
        return Err(Error::BallOutsideDomain {
            center: c[..n].to_vec(),
            radius: r,
        });
    }
    let ball = BallRegion::new(c, r)?;
    let positive = g.nodes_in_ball(&ball).into_iter().filter(|&k| !dead.mask[k]).count();
    Ok(positive as f64 * g.cell_volume() / r.powi(n as i32))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub node: usize,
    pub point: [f64; 2],
    pub radii: Vec<f64>,
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
}

pub fn density_report(dead: &DeadCoreSet, domain: &Domain, x0: usize, radii: &[f64]) -> Result<DensityReport> {
    let ratios = radii
        .iter()
        .map(|&r| density_ratio(dead, domain, x0, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityReport {
        node: x0,
        point: dead.grid.coord(x0),
        radii: radii.to_vec(),
        min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        ratios,
    })
}

impl DensityReport {
    /// CSV `r,ratio`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "ratio"]).map_err(csv_err)?;
        for (r, q) in self.radii.iter().zip(&self.ratios) {
            wr.write_record([format!("{r:?}"), format!("{q:?}")]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub box_sizes: Vec<f64>,
    pub counts: Vec<usize>,
    /// Slope of `log count` against `log(1/size)`.
    pub dimension: f64,
    pub fit_residual: f64,
}

impl DimensionReport {
    /// CSV `size,count`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["size", "count"]).map_err(csv_err)?;
        for (s, c) in self.box_sizes.iter().zip(&self.counts) {
            wr.write_record([format!("{s:?}"), c.to_string()]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `h * 2^k` for `k = 1..=count`.
pub fn dyadic_box_sizes(h: f64, count: usize) -> Vec<f64> {
    (1..=count as i32).map(|k| h * 2f64.powi(k)).collect()
}

/// Box-counting dimension of the free boundary nodes (both sides) with boxes
/// aligned to the grid origin.
pub fn box_dimension(fb: &FreeBoundarySet, box_sizes: &[f64]) -> Result<DimensionReport> {
    let g = &fb.grid;
    if box_sizes.len() < 4 {
        return Err(Error::Precondition(format!("need at least 4 box sizes, got {}", box_sizes.len())));
    }
    if let Some(s) = box_sizes.iter().find(|&&s| !(s >= g.h() * (1.0 - 1e-12)) || !s.is_finite()) {
        return Err(Error::Precondition(format!("box size {s} below the grid spacing {}", g.h())));
    }
    let nodes = fb.nodes();
    let lo = g.lo();
    let counts: Vec<usize> = box_sizes
        .iter()
        .map(|&s| {
            let boxes: BTreeSet<(i64, i64)> = nodes
                .iter()
                .map(|&k| {
                    let x = g.coord(k);
                    // Nudge so that nodes on box faces fall consistently.
                    let b = |d: usize| ((x[d] - lo[d]) / s + 1e-9).floor() as i64;
                    (b(0), if g.dim() == 2 { b(1) } else { 0 })
                })
                .collect();
            boxes.len()
        })
        .collect();
    let occupied: Vec<(f64, f64)> = box_sizes
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| ((1.0 / s).ln(), (c as f64).ln()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = occupied.into_iter().unzip();
    let fit = line_fit(&xs, &ys)
        .ok_or_else(|| Error::Precondition("fewer than 2 occupied box scales".into()))?;
    Ok(DimensionReport {
        box_sizes: box_sizes.to_vec(),
        counts,
        dimension: fit.slope,
        fit_residual: fit.rms,
    })
}
