//! Discrete Dirichlet solver and discrete viscosity checks.
//!
//! Each interior node is driven by a local, Newton-normalized pseudo-time step
//! `u <- max(0, u + step * R(u) / D(u))`, where `R` is the residual of the
//! equation and `D` a positive bound of `-dR/du_node`. The projection onto
//! `u >= 0` enforces the positive part in the absorption and lets dead cores
//! form. Two orderings are available: simultaneous (Jacobi) updates and a
//! red-black over-relaxed sweep; both are deterministic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_norm_sq, lipschitz_seminorm, split_second_differences, CartesianGrid, ScalarField};
use crate::model::{operator_with_f, pow, DomainKind, ProblemSpec};

/// Step size: a fixed number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

impl StepSize {
    pub const AUTO: StepSize = StepSize::Auto(AutoTag::Auto);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Jacobi,
    RedBlack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    /// Decreasing regularization values; `None` picks decades down to the floor
    /// when `p < 0` and just the floor otherwise.
    pub eps_schedule: Option<Vec<f64>>,
    /// Final regularization; defaults to `h^2` on each grid.
    pub eps_floor: Option<f64>,
    /// Jacobi step after normalization; `auto` is 0.4.
    pub pseudo_dt: StepSize,
    /// Over-relaxation factor of the red-black sweep; `auto` is `2 / (1 + sin(pi h / L))`.
    pub omega: StepSize,
    pub sweep: Sweep,
    pub tol_residual: f64,
    pub max_sweeps: usize,
    pub damping: f64,
    /// Start from solutions on dyadically coarsened grids.
    pub nested: bool,
    /// Floor for `u` inside `u^(mu - 1)` of the normalizer.
    pub u_floor: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            eps_schedule: None,
            eps_floor: None,
            pseudo_dt: StepSize::AUTO,
            omega: StepSize::AUTO,
            sweep: Sweep::RedBlack,
            tol_residual: 1e-8,
            max_sweeps: 200_000,
            damping: 1.0,
            nested: true,
            u_floor: 1e-12,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.tol_residual > 0.0) {
            return bad(format!("tol_residual = {} must be positive", self.tol_residual));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping = {} must lie in (0, 1]", self.damping));
        }
        if let Some(s) = &self.eps_schedule {
            if s.is_empty() || s.iter().any(|&e| !(e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
                return bad(format!("eps_schedule {s:?} must be positive and strictly decreasing"));
            }
        }
        if let Some(f) = self.eps_floor {
            if !(f > 0.0) {
                return bad(format!("eps_floor = {f} must be positive"));
            }
        }
        if let StepSize::Value(v) = self.pseudo_dt {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("pseudo_dt = {v} must lie in (0, 1]"));
            }
        }
        if let StepSize::Value(v) = self.omega {
            if !(v > 0.0 && v < 2.0) {
                return bad(format!("omega = {v} must lie in (0, 2)"));
            }
        }
        Ok(())
    }

    /// Regularization stages on a grid of spacing `h`.
    pub fn stages(&self, p: f64, h: f64) -> Vec<f64> {
        let floor = self.eps_floor.unwrap_or(h * h);
        match &self.eps_schedule {
            Some(s) => s.clone(),
            None if p < 0.0 => {
                let mut out = Vec::new();
                let mut e = 0.1;
                while e > floor * 1.5 {
                    out.push(e);
                    e /= 10.0;
                }
                out.push(floor);
                out
            }
            None => vec![floor],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub cells: usize,
    pub eps: f64,
    pub sweeps: usize,
    pub residual: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub stages: Vec<StageReport>,
    pub total_sweeps: usize,
    pub final_residual: f64,
    pub tol_residual: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Whether the finest-level residual trace never increased.
    pub monotone_decrease: bool,
    /// `(sweep, max residual)` on the finest grid.
    pub trace: Vec<(usize, f64)>,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["sweep", "max_residual"]).map_err(|e| Error::Format(e.to_string()))?;
        for (s, r) in &self.trace {
            wr.write_record([s.to_string(), format!("{r:?}")])
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Nodes carrying Dirichlet data: the outer grid layer, and for ball domains
/// every node outside the ball or with a stencil neighbour outside it.
pub fn fixed_nodes(spec: &ProblemSpec, grid: &CartesianGrid) -> Vec<bool> {
    let n = grid.dim();
    let mut fixed: Vec<bool> = (0..grid.len()).map(|k| grid.is_edge(k)).collect();
    if spec.domain.kind == DomainKind::Ball {
        let inside: Vec<bool> = (0..grid.len())
            .map(|k| spec.domain.contains(&grid.coord(k)[..n]))
            .collect();
        let [nx, ny] = grid.counts();
        for k in 0..grid.len() {
            if fixed[k] {
                continue;
            }
            let (i, j) = grid.ij(k);
            let mut all = true;
            for dj in if n == 2 { -1isize..=1 } else { 0..=0 } {
                for di in -1isize..=1 {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= nx as isize || jj >= ny as isize {
                        continue;
                    }
                    all &= inside[grid.index(ii as usize, jj as usize)];
                }
            }
            fixed[k] = !all;
        }
    }
    fixed
}

/// Node-wise residual: the equation at interior nodes, `g - u` at fixed nodes.
pub fn discrete_residual(field: &ScalarField, spec: &ProblemSpec, eps_reg: f64) -> Result<ScalarField> {
    let grid = *field.grid();
    let n = grid.dim();
    let fixed = fixed_nodes(spec, &grid);
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let x = grid.coord(k);
        if fixed[k] {
            out.push(spec.g(&x[..n]) - field.get(k));
            continue;
        }
        let g2 = gradient_norm_sq(field, k)?;
        let [dxx, dyy, xp, xm] = split_second_differences(field, k)?;
        let f = if n == 2 {
            spec.operator.apply2_monotone(dxx, dyy, xp, xm, spec.ellipticity).0
        } else {
            spec.operator.apply1(dxx, spec.ellipticity)
        };
        out.push(operator_with_f(&x[..n], g2, f, field.get(k), spec, eps_reg)?);
    }
    ScalarField::new(grid, out)
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

/// Per-grid data of the iteration.
struct Discretization<'a> {
    spec: &'a ProblemSpec,
    grid: CartesianGrid,
    fixed: Vec<bool>,
    a: Vec<f64>,
    lam: Vec<f64>,
    g: Vec<f64>,
    /// Interior nodes, red (even `i + j`) first.
    order: Vec<usize>,
    u_floor: f64,
}

impl<'a> Discretization<'a> {
    fn new(spec: &'a ProblemSpec, grid: CartesianGrid, u_floor: f64) -> Self {
        let n = grid.dim();
        let fixed = fixed_nodes(spec, &grid);
        let coords: Vec<[f64; 2]> = (0..grid.len()).map(|k| grid.coord(k)).collect();
        let a = coords.iter().map(|x| spec.a(&x[..n])).collect();
        let lam = coords.iter().map(|x| spec.lambda0(&x[..n])).collect();
        let g = coords.iter().map(|x| spec.g(&x[..n])).collect();
        let mut order: Vec<usize> = (0..grid.len())
            .filter(|&k| !fixed[k] && {
                let (i, j) = grid.ij(k);
                (i + j) % 2 == 0
            })
            .collect();
        order.extend((0..grid.len()).filter(|&k| !fixed[k] && {
            let (i, j) = grid.ij(k);
            (i + j) % 2 == 1
        }));
        Self {
            spec,
            grid,
            fixed,
            a,
            lam,
            g,
            order,
            u_floor,
        }
    }

    /// Node-local equation at interior node `k` with all neighbours frozen. The
    /// gradient modulus is taken at the current centre value and held fixed
    /// while solving for the new one.
    #[inline]
    fn local(&self, u: &[f64], k: usize, eps: f64) -> Local<'_> {
        let spec = self.spec;
        let e = spec.exponents;
        let h = self.grid.h();
        let h2 = h * h;
        let (off, g2) = if self.grid.dim() == 2 {
            let nx = self.grid.counts()[0];
            let (east, west, north, south) = (u[k + 1], u[k - 1], u[k + nx], u[k - nx]);
            let cross = east + west + north + south;
            let xp = (u[k + nx + 1] + u[k - nx - 1] - cross) / (2.0 * h2);
            let xm = -(u[k + nx - 1] + u[k - nx + 1] - cross) / (2.0 * h2);
            let c = u[k];
            let g2 = (sq(east - c) + sq(c - west) + sq(north - c) + sq(c - south)) / (2.0 * h2);
            ([(east + west) / h2, (north + south) / h2, xp, xm], g2)
        } else {
            let (east, west, c) = (u[k + 1], u[k - 1], u[k]);
            ([(east + west) / h2, 0.0, 0.0, 0.0], (sq(east - c) + sq(c - west)) / (2.0 * h2))
        };
        let m = (g2 + eps * eps).sqrt();
        let a = self.a[k];
        let mut ham = 0.0;
        let mut ham_stiffness = 0.0;
        if a != 0.0 {
            ham = a * pow(g2.sqrt(), e.q);
            if e.q > 0.0 {
                ham_stiffness = e.q * a.abs() * pow(m, e.q - 1.0) / h;
            }
        }
        Local {
            disc: self,
            off,
            mp: pow(m, e.p),
            ham,
            ham_stiffness,
            lam: self.lam[k],
            two_over_h2: 2.0 / h2,
        }
    }

    /// Residual `R` and normalizer `D > 0` at interior node `k`.
    #[inline]
    fn eval(&self, u: &[f64], k: usize, eps: f64) -> (f64, f64) {
        let loc = self.local(u, k, eps);
        let (r, d) = loc.eval(u[k]);
        (r, d + loc.ham_stiffness)
    }

    /// `|R|` where `u > 0`, `max(R, 0)` where `u = 0`.
    #[inline]
    fn projected(r: f64, u: f64) -> f64 {
        if u > 0.0 {
            r.abs()
        } else {
            r.max(0.0)
        }
    }

    fn max_residual(&self, u: &[f64], eps: f64) -> f64 {
        self.order
            .iter()
            .map(|&k| Self::projected(self.eval(u, k, eps).0, u[k]))
            .fold(0.0, f64::max)
    }

    fn impose_boundary(&self, u: &mut [f64]) {
        for k in 0..u.len() {
            if self.fixed[k] {
                u[k] = self.g[k];
            } else if u[k] < 0.0 {
                u[k] = 0.0;
            }
        }
    }

    /// One sweep; returns the largest projected residual seen before each update.
    fn sweep(&self, u: &mut [f64], scratch: &mut [f64], eps: f64, step: f64, kind: Sweep) -> f64 {
        let mut worst: f64 = 0.0;
        match kind {
            Sweep::Jacobi => {
                scratch.copy_from_slice(u);
                for &k in &self.order {
                    let (r, d) = self.eval(scratch, k, eps);
                    worst = worst.max(Self::projected(r, scratch[k]));
                    u[k] = (scratch[k] + step * r / d).max(0.0);
                }
            }
            Sweep::RedBlack => {
                for &k in &self.order {
                    let loc = self.local(u, k, eps);
                    let (r, target) = loc.solve(u[k]);
                    worst = worst.max(Self::projected(r, u[k]));
                    u[k] = (u[k] + step * (target - u[k])).max(0.0);
                }
            }
        }
        worst
    }
}

/// Scalar equation `R(t) = mp F_h(t) + ham - lam t^mu` for the centre value
/// `t`; `off` holds the neighbour parts of `(dxx, dyy, xp, xm)`.
struct Local<'a> {
    disc: &'a Discretization<'a>,
    off: [f64; 4],
    mp: f64,
    ham: f64,
    ham_stiffness: f64,
    lam: f64,
    two_over_h2: f64,
}

impl Local<'_> {
    /// `(R(t), -R'(t))`; the derivative is one-sided at kinks of `F` and
    /// uses a floor for `t^(mu - 1)`.
    #[inline]
    fn eval(&self, t: f64) -> (f64, f64) {
        let spec = self.disc.spec;
        let ell = spec.ellipticity;
        let e = spec.exponents;
        let shift = self.two_over_h2 * t;
        let (f, w) = if self.disc.grid.dim() == 2 {
            let half = 0.5 * shift;
            spec.operator
                .apply2_monotone(self.off[0] - shift, self.off[1] - shift, self.off[2] + half, self.off[3] - half, ell)
        } else {
            spec.operator.apply1_weighted(self.off[0] - shift, ell)
        };
        let tp = t.max(0.0);
        let r = self.mp * f + self.ham - self.lam * pow(tp, e.mu);
        let mut d = self.mp * w * self.two_over_h2;
        if e.mu > 0.0 {
            d += e.mu * self.lam.abs() * pow(tp.max(self.disc.u_floor), e.mu - 1.0);
        }
        (r, d)
    }

    /// Residual at `t0` and the non-negative root of the decreasing map `R`
    /// (zero when `R(0) <= 0`), by Newton steps safeguarded with bisection.
    fn solve(&self, t0: f64) -> (f64, f64) {
        let (r0, d0) = self.eval(t0);
        if r0 == 0.0 {
            return (r0, t0);
        }
        let scale = t0.abs().max(1e-300);
        let (mut lo, mut hi);
        if r0 > 0.0 {
            lo = t0;
            let mut step = (r0 / d0.max(1e-300)).max(1e-12 * scale);
            loop {
                let t = lo + step;
                if self.eval(t).0 <= 0.0 {
                    hi = t;
                    break;
                }
                lo = t;
                step *= 2.0;
                if !t.is_finite() {
                    return (r0, t0);
                }
            }
        } else {
            hi = t0;
            if self.eval(0.0).0 <= 0.0 {
                return (r0, 0.0);
            }
            lo = 0.0;
        }
        // R(lo) > 0 >= R(hi)
        let mut t = if r0 > 0.0 { lo } else { hi };
        for _ in 0..60 {
            let (r, d) = self.eval(t);
            if r > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if r.abs() <= 1e-15 * (self.lam.abs() + self.mp * self.off[0].abs() + self.ham.abs())
                || hi - lo <= 1e-15 * hi.abs().max(1e-300)
            {
                break;
            }
            let newton = t + r / d.max(1e-300);
            t = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        (r0, t)
    }
}

/// Solves the Dirichlet problem on `grid` starting from the constant `max g`.
pub fn solve_dirichlet(
    spec: &ProblemSpec,
    grid: &CartesianGrid,
    config: &SolveConfig,
) -> Result<(ScalarField, SolveReport)> {
    solve_from(spec, grid, config, None)
}

/// As [`solve_dirichlet`], from a supplied initial iterate (boundary values are reset to `g`).
pub fn solve_from(
    spec: &ProblemSpec,
    grid: &CartesianGrid,
    config: &SolveConfig,
    initial: Option<&ScalarField>,
) -> Result<(ScalarField, SolveReport)> {
    spec.validate()?;
    config.validate()?;
    if grid.dim() != spec.dim() {
        return Err(Error::InvalidGrid(format!(
            "grid dimension {} differs from domain dimension {}",
            grid.dim(),
            spec.dim()
        )));
    }

    // Coarse-to-fine chain, finest last.
    let mut grids = vec![*grid];
    if config.nested && initial.is_none() {
        while let Some(c) = grids.last().unwrap().coarsened() {
            if c.counts()[0] - 1 < 8 {
                break;
            }
            grids.push(c);
        }
    }
    grids.reverse();

    let mut stages = Vec::new();
    let mut total_sweeps = 0;
    let mut u: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let levels = grids.len();
    let mut last_residual = f64::INFINITY;
    let mut converged = true;

    for (level, g) in grids.iter().enumerate() {
        let disc = Discretization::new(spec, *g, config.u_floor);
        if level == 0 {
            u = match initial {
                Some(f) if f.grid() == g => f.values().to_vec(),
                Some(_) => return Err(Error::InvalidGrid("initial iterate lives on a different grid".into())),
                None => {
                    let top = (0..g.len()).filter(|&k| disc.fixed[k]).map(|k| disc.g[k]).fold(0.0, f64::max);
                    vec![top; g.len()]
                }
            };
        } else {
            u = prolong(&grids[level - 1], g, &u);
        }
        disc.impose_boundary(&mut u);

        let finest = level + 1 == levels;
        let tol = config.tol_residual * 4f64.powi((levels - 1 - level) as i32);
        let all_stages = config.stages(spec.exponents.p, g.h());
        let eps_list: Vec<f64> = if level == 0 { all_stages } else { vec![*all_stages.last().unwrap()] };
        let n_eps = eps_list.len();
        for (si, &eps) in eps_list.iter().enumerate() {
            let stage_tol = if si + 1 == n_eps { tol } else { tol.max(eps) };
            let (sweeps, res, omega, ok) = iterate(&disc, &mut u, eps, stage_tol, config, finest, &mut trace, total_sweeps)?;
            total_sweeps += sweeps;
            stages.push(StageReport {
                cells: g.counts()[0] - 1,
                eps,
                sweeps,
                residual: res,
                omega,
            });
            last_residual = res;
            if !ok && finest {
                converged = false;
            }
        }
    }

    let field = ScalarField::new(*grid, u)?;
    let report = SolveReport {
        status: if converged { SolveStatus::Converged } else { SolveStatus::NotConverged },
        monotone_decrease: trace.windows(2).all(|w: &[(usize, f64)]| w[1].1 <= w[0].1),
        stages,
        total_sweeps,
        final_residual: last_residual,
        tol_residual: config.tol_residual,
        u_min: field.min(),
        u_max: field.max(),
        trace,
    };
    if !converged {
        return Err(Error::NotConverged {
            residual: report.final_residual,
            sweeps: report.total_sweeps,
            report: Box::new(report),
        });
    }
    Ok((field, report))
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    disc: &Discretization,
    u: &mut Vec<f64>,
    eps: f64,
    tol: f64,
    config: &SolveConfig,
    record: bool,
    trace: &mut Vec<(usize, f64)>,
    offset: usize,
) -> Result<(usize, f64, f64, bool)> {
    let cells = (disc.grid.counts()[0] - 1) as f64;
    let mut omega = match (config.sweep, config.pseudo_dt, config.omega) {
        (Sweep::Jacobi, StepSize::Value(v), _) => v,
        (Sweep::Jacobi, StepSize::Auto(_), _) => 0.4,
        (Sweep::RedBlack, _, StepSize::Value(v)) => v,
        (Sweep::RedBlack, _, StepSize::Auto(_)) => 2.0 / (1.0 + (std::f64::consts::PI / cells).sin()),
    };
    let mut scratch = vec![0.0; u.len()];
    let mut best = f64::INFINITY;
    let mut checkpoint = u.clone();
    let mut backoffs = 0;
    let mut sweeps = 0;
    // Nonlinear sweeps can settle into a cycle where the degenerate factor
    // nearly vanishes; when the best residual stops halving, lower omega.
    let window = 500.max(2 * cells as usize);
    let (mut mark, mut mark_sweep) = (f64::INFINITY, 0);
    while sweeps < config.max_sweeps {
        let worst = disc.sweep(u, &mut scratch, eps, config.damping * omega, config.sweep);
        sweeps += 1;
        if record {
            trace.push((offset + sweeps, worst));
        }
        let blown = !worst.is_finite() || worst > 1e6 * best.max(tol);
        if blown || u.iter().any(|v| !v.is_finite()) {
            let node = u.iter().position(|v| !v.is_finite()).unwrap_or(0);
            if config.sweep == Sweep::Jacobi || omega <= 1.0 || backoffs >= 8 {
                return Err(Error::Unstable { node, sweep: offset + sweeps });
            }
            omega = 1.0 + 0.5 * (omega - 1.0);
            backoffs += 1;
            u.copy_from_slice(&checkpoint);
            best = f64::INFINITY;
            continue;
        }
        if worst < best {
            best = worst;
            if sweeps % 64 == 0 {
                checkpoint.copy_from_slice(u);
            }
        }
        if worst < 0.5 * mark {
            mark = worst;
            mark_sweep = sweeps;
        } else if config.sweep == Sweep::RedBlack && omega > 0.125 && sweeps - mark_sweep >= window {
            omega = if omega > 1.05 {
                1.0 + 0.75 * (omega - 1.0)
            } else if omega > 1.0 {
                1.0
            } else {
                0.5 * omega
            };
            mark = worst;
            mark_sweep = sweeps;
        }
        if worst <= tol {
            let exact = disc.max_residual(u, eps);
            if exact <= tol {
                return Ok((sweeps, exact, omega, true));
            }
        }
    }
    let exact = disc.max_residual(u, eps);
    Ok((sweeps, exact, omega, exact <= tol))
}

/// Bilinear prolongation from the dyadic coarse grid.
fn prolong(coarse: &CartesianGrid, fine: &CartesianGrid, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; fine.len()];
    let dim = fine.dim();
    for (k, slot) in out.iter_mut().enumerate() {
        let (i, j) = fine.ij(k);
        let (ci, ri) = (i / 2, i % 2);
        let (cj, rj) = (j / 2, j % 2);
        let at = |a: usize, b: usize| u[coarse.index(a, b)];
        *slot = match (ri, if dim == 2 { rj } else { 0 }) {
            (0, 0) => at(ci, cj),
            (1, 0) => 0.5 * (at(ci, cj) + at(ci + 1, cj)),
            (0, _) => 0.5 * (at(ci, cj) + at(ci, cj + 1)),
            _ => 0.25 * (at(ci, cj) + at(ci + 1, cj) + at(ci, cj + 1) + at(ci + 1, cj + 1)),
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Solution,
    Subsolution,
    Supersolution,
    Neither,
}

/// Discrete sub/supersolution classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViscosityReport {
    pub tol: f64,
    pub solution: usize,
    pub sub_only: usize,
    pub super_only: usize,
    pub neither: usize,
    /// Interior nodes whose full stencil neighbourhood is constant; classified
    /// by the sign of `f(x, K) = lambda0(x) K^mu` instead of the residual.
    pub constancy_nodes: usize,
    /// `max(-R)`: how far the subsolution inequality `R >= 0` fails.
    pub max_sub_violation: f64,
    /// `max(R)`: how far the supersolution inequality `R <= 0` fails.
    pub max_super_violation: f64,
    /// Class per node; `None` at fixed nodes.
    pub classes: Vec<Option<NodeClass>>,
}

impl ViscosityReport {
    pub fn all_subsolution(&self) -> bool {
        self.super_only == 0 && self.neither == 0
    }

    pub fn all_supersolution(&self) -> bool {
        self.sub_only == 0 && self.neither == 0
    }

    pub fn all_solution(&self) -> bool {
        self.solution == self.classes.iter().flatten().count()
    }
}

/// Classifies interior nodes using the sign of the discrete residual `R`:
/// subsolution iff `R >= -tol`, supersolution iff `R <= tol`.
pub fn verify_viscosity_inequalities(
    field: &ScalarField,
    spec: &ProblemSpec,
    eps_reg: f64,
    tol: f64,
) -> Result<ViscosityReport> {
    let grid = *field.grid();
    let n = grid.dim();
    let fixed = fixed_nodes(spec, &grid);
    let res = discrete_residual(field, spec, eps_reg)?;
    let mut rep = ViscosityReport {
        tol,
        solution: 0,
        sub_only: 0,
        super_only: 0,
        neither: 0,
        constancy_nodes: 0,
        max_sub_violation: 0.0,
        max_super_violation: 0.0,
        classes: vec![None; grid.len()],
    };
    let nx = grid.counts()[0];
    for k in 0..grid.len() {
        if fixed[k] {
            continue;
        }
        let c = field.get(k);
        let neighbours: Vec<usize> = if n == 2 {
            vec![k - 1, k + 1, k - nx, k + nx, k - nx - 1, k - nx + 1, k + nx - 1, k + nx + 1]
        } else {
            vec![k - 1, k + 1]
        };
        let constant = neighbours.iter().all(|&m| field.get(m) == c);
        let (sub, sup) = if constant {
            rep.constancy_nodes += 1;
            let x = grid.coord(k);
            let f = spec.lambda0(&x[..n]) * pow(c.max(0.0), spec.exponents.mu);
            rep.max_sub_violation = rep.max_sub_violation.max(f);
            rep.max_super_violation = rep.max_super_violation.max(-f);
            (f <= tol, f >= -tol)
        } else {
            let r = res.get(k);
            rep.max_sub_violation = rep.max_sub_violation.max(-r);
            rep.max_super_violation = rep.max_super_violation.max(r);
            (r >= -tol, r <= tol)
        };
        let class = match (sub, sup) {
            (true, true) => {
                rep.solution += 1;
                NodeClass::Solution
            }
            (true, false) => {
                rep.sub_only += 1;
                NodeClass::Subsolution
            }
            (false, true) => {
                rep.super_only += 1;
                NodeClass::Supersolution
            }
            (false, false) => {
                rep.neither += 1;
                NodeClass::Neither
            }
        };
        rep.classes[k] = Some(class);
    }
    Ok(rep)
}

/// Which hypothesis on `(h1, h2, lambda0)` of the comparison principle holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonHypothesis {
    /// `h1 > h2` and `inf lambda0 >= 0`.
    Strict,
    /// `h1 >= h2` and `inf lambda0 > 0`.
    PositiveAbsorption,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonOptions {
    pub eps_reg: f64,
    /// Allowed `max(u - v)`.
    pub ordering_tol: f64,
    /// Slack in the residual inequalities `R[u] >= h1`, `R[v] <= h2`.
    pub residual_tol: f64,
    /// Sanity bound for the discrete Lipschitz seminorm of one comparand.
    pub lipschitz_bound: f64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        Self {
            eps_reg: 0.0,
            ordering_tol: 1e-6,
            residual_tol: 1e-6,
            lipschitz_bound: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_difference: f64,
    pub worst_node: Option<usize>,
    pub hypothesis: ComparisonHypothesis,
    pub lipschitz_u: f64,
    pub lipschitz_v: f64,
    pub lipschitz_ok: bool,
    /// Interior nodes where `R[u] >= h1 - tol` fails.
    pub sub_failures: usize,
    /// Interior nodes where `R[v] <= h2 + tol` fails.
    pub super_failures: usize,
    pub passed: bool,
}

/// Checks `u <= v` at interior nodes given `u <= v` on fixed nodes.
///
/// The comparison principle needs one comparand locally Lipschitz. On a grid
/// that is recorded as a bound on the discrete seminorm; it is a sanity check,
/// not a discrete counterpart of the continuum hypothesis.
pub fn comparison_check(
    u: &ScalarField,
    v: &ScalarField,
    spec: &ProblemSpec,
    h1: &ScalarField,
    h2: &ScalarField,
    opts: &ComparisonOptions,
) -> Result<ComparisonReport> {
    let grid = *u.grid();
    if v.grid() != &grid || h1.grid() != &grid || h2.grid() != &grid {
        return Err(Error::InvalidGrid("comparands live on different grids".into()));
    }
    let fixed = fixed_nodes(spec, &grid);
    if let Some(k) = (0..grid.len()).find(|&k| fixed[k] && u.get(k) > v.get(k) + opts.ordering_tol) {
        return Err(Error::Precondition(format!(
            "boundary ordering violated at node {k}: u = {} > v = {}",
            u.get(k),
            v.get(k)
        )));
    }
    let norms = spec.norms_over(&(0..grid.len()).map(|k| grid.coord(k)).collect::<Vec<_>>());
    let interior: Vec<usize> = (0..grid.len()).filter(|&k| !fixed[k]).collect();
    let strict = interior.iter().all(|&k| h1.get(k) > h2.get(k));
    let weak = interior.iter().all(|&k| h1.get(k) >= h2.get(k));
    let hypothesis = if strict && norms.inf_lambda0 >= 0.0 {
        ComparisonHypothesis::Strict
    } else if weak && norms.inf_lambda0 > 0.0 {
        ComparisonHypothesis::PositiveAbsorption
    } else {
        ComparisonHypothesis::None
    };
    let ru = discrete_residual(u, spec, opts.eps_reg)?;
    let rv = discrete_residual(v, spec, opts.eps_reg)?;
    let sub_failures = interior.iter().filter(|&&k| ru.get(k) < h1.get(k) - opts.residual_tol).count();
    let super_failures = interior.iter().filter(|&&k| rv.get(k) > h2.get(k) + opts.residual_tol).count();
    let lipschitz_u = lipschitz_seminorm(u, None);
    let lipschitz_v = lipschitz_seminorm(v, None);
    let lipschitz_ok = lipschitz_u.min(lipschitz_v) <= opts.lipschitz_bound;
    let mut max_difference = f64::NEG_INFINITY;
    let mut worst_node = None;
    for &k in &interior {
        let d = u.get(k) - v.get(k);
        if d > max_difference {
            max_difference = d;
            worst_node = Some(k);
        }
    }
    if interior.is_empty() {
        max_difference = 0.0;
    }
    Ok(ComparisonReport {
        max_difference,
        worst_node,
        hypothesis,
        lipschitz_u,
        lipschitz_v,
        lipschitz_ok,
        sub_failures,
        super_failures,
        passed: max_difference <= opts.ordering_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{test_spec, Domain};

    fn grid(cells: usize) -> CartesianGrid {
        CartesianGrid::for_domain(&Domain::square(0.5), cells).unwrap()
    }

    #[test]
    fn kernel_matches_full_operator() {
        let mut spec = test_spec(0.7, 0.4, 0.6, "1 + |x|", "3 + x1", "1");
        spec.operator = crate::model::OperatorKind::PucciMinus;
        spec.ellipticity = crate::model::EllipticityPair::new(0.5, 2.0).unwrap();
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x| 0.3 + (2.0 * x[0]).sin() * x[1] + x[0] * x[0]).unwrap();
        let res = discrete_residual(&f, &spec, 1e-3).unwrap();
        let disc = Discretization::new(&spec, g, 1e-12);
        for &k in &disc.order {
            let (r, d) = disc.eval(f.values(), k, 1e-3);
            assert!((r - res.get(k)).abs() < 1e-9 * (1.0 + r.abs()), "{r} vs {}", res.get(k));
            assert!(d > 0.0);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let spec = test_spec(1.0, 1.5, 0.5, "1", "4", "0");
        let (u, rep) = solve_dirichlet(&spec, &grid(16), &SolveConfig::default()).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
        assert_eq!(rep.status, SolveStatus::Converged);
        let r = discrete_residual(&u, &spec, 0.0).unwrap();
        assert!(r.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_quadratic_is_reproduced() {
        let spec = test_spec(0.0, 0.0, 0.0, "0", "4", "|x|^2");
        let cfg = SolveConfig {
            tol_residual: 1e-9,
            ..Default::default()
        };
        for sweep in [Sweep::RedBlack, Sweep::Jacobi] {
            let cfg = SolveConfig { sweep, ..cfg.clone() };
            let (u, rep) = solve_dirichlet(&spec, &grid(16), &cfg).unwrap();
            let err = (0..u.grid().len())
                .map(|k| {
                    let x = u.grid().coord(k);
                    (u.get(k) - x[0] * x[0] - x[1] * x[1]).abs()
                })
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{sweep:?}: {err}");
            assert!(rep.final_residual <= 1e-9);
        }
    }

    #[test]
    fn large_absorption_creates_dead_core() {
        let spec = test_spec(0.0, 0.0, 0.5, "0", "100", "1");
        let (u, rep) = solve_dirichlet(&spec, &grid(32), &SolveConfig::default()).unwrap();
        let centre = u.grid().nearest(&[0.0, 0.0]);
        assert_eq!(u.get(centre), 0.0, "{rep:?}");
        assert!(u.min() >= 0.0);
        let fixed = fixed_nodes(&spec, u.grid());
        for k in 0..u.grid().len() {
            if fixed[k] {
                assert_eq!(u.get(k), 1.0);
            }
        }
    }

    #[test]
    fn not_converged_carries_report() {
        let spec = test_spec(0.0, 0.0, 0.5, "0", "1", "1");
        let cfg = SolveConfig {
            max_sweeps: 3,
            nested: false,
            ..Default::default()
        };
        match solve_dirichlet(&spec, &grid(32), &cfg) {
            Err(Error::NotConverged { report, sweeps, .. }) => {
                assert_eq!(sweeps, 3);
                assert_eq!(report.trace.len(), 3);
                let mut csv = Vec::new();
                report.write_trace_csv(&mut csv).unwrap();
                assert!(String::from_utf8(csv).unwrap().starts_with("sweep,max_residual\n"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn singular_case_runs_schedule() {
        let spec = test_spec(-0.5, 0.0, 0.2, "0", "2", "0.5");
        let cfg = SolveConfig::default();
        assert_eq!(cfg.stages(-0.5, 1.0 / 16.0).len(), 3);
        let (u, rep) = solve_dirichlet(&spec, &grid(16), &cfg).unwrap();
        assert!(u.min() >= 0.0 && u.max() <= 0.5);
        assert!(rep.stages.len() >= 3);
    }

    #[test]
    fn ball_domain_solve() {
        let mut spec = test_spec(0.0, 0.0, 0.0, "0", "4", "|x|^2");
        spec.domain = Domain::ball(&[0.0, 0.0], 0.5);
        let (u, _) = solve_dirichlet(&spec, &grid(16), &SolveConfig::default()).unwrap();
        let k = u.grid().nearest(&[0.125, 0.0]);
        assert!((u.get(k) - 0.015625).abs() < 1e-6);
    }

    #[test]
    fn viscosity_classification_of_constants() {
        let spec = test_spec(0.0, 0.0, 0.5, "0", "1", "2");
        let g = grid(8);
        let rep = verify_viscosity_inequalities(&ScalarField::constant(g, 2.0), &spec, 0.0, 1e-12).unwrap();
        assert_eq!(rep.super_only, rep.classes.iter().flatten().count());
        assert!(rep.all_supersolution() && !rep.all_subsolution());
        let rep = verify_viscosity_inequalities(&ScalarField::constant(g, 0.0), &spec, 0.0, 1e-12).unwrap();
        assert!(rep.all_solution());
    }

    #[test]
    fn comparison_of_equal_fields() {
        let spec = test_spec(0.0, 0.0, 0.5, "0", "1", "1");
        let g = grid(8);
        let u = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]).unwrap();
        let zero = ScalarField::constant(g, 0.0);
        let r = comparison_check(&u, &u, &spec, &zero, &zero, &ComparisonOptions::default()).unwrap();
        assert_eq!(r.max_difference, 0.0);
        assert!(r.passed);
        assert_eq!(r.hypothesis, ComparisonHypothesis::PositiveAbsorption);
        let lower = u.map(|v| v - 0.5).unwrap();
        let bad = comparison_check(&u, &lower, &spec, &zero, &zero, &ComparisonOptions::default());
        assert!(matches!(bad, Err(Error::Precondition(_))));
    }

    #[test]
    fn config_validation_and_serde() {
        let cfg: SolveConfig = toml::from_str("pseudo_dt = \"auto\"\ntol_residual = 1e-6\nsweep = \"jacobi\"").unwrap();
        assert_eq!(cfg.pseudo_dt, StepSize::AUTO);
        assert_eq!(cfg.sweep, Sweep::Jacobi);
        let cfg: SolveConfig = toml::from_str("pseudo_dt = 0.3\neps_schedule = [0.1, 0.01]").unwrap();
        assert_eq!(cfg.pseudo_dt, StepSize::Value(0.3));
        cfg.validate().unwrap();
        let bad = SolveConfig {
            eps_schedule: Some(vec![0.01, 0.1]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
