//! Growth-rate measurements at free boundary points: power-law fits, upper
//! growth, non-degeneracy ratios, the dyadic decay of the normalized solution,
//! the flatness probe and the positive-or-zero dichotomy.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{csv_err, sup_over_ball, BallRegion, ScalarField};
use crate::model::{DerivedExponents, Domain, ExponentTriple, ProblemSpec, ScalingMap};
use crate::solver::fixed_nodes;
use crate::stats::line_fit;

/// `r_min, r_min q, ..., r_max`, geometric with `count >= 2` entries.
pub fn geometric_radii(r_min: f64, r_max: f64, count: usize) -> Vec<f64> {
    let m = count.max(2);
    (0..m)
        .map(|k| r_min * (r_max / r_min).powf(k as f64 / (m - 1) as f64))
        .collect()
}

/// `h * 2^k` for `k = k_min..=k_max`, increasing.
pub fn dyadic_radii(h: f64, k_min: u32, k_max: u32) -> Vec<f64> {
    (k_min..=k_max).map(|k| h * 2f64.powi(k as i32)).collect()
}

fn is_on_interface(field: &ScalarField, node: usize, threshold: f64) -> bool {
    let g = field.grid();
    let (i, j) = g.ij(node);
    let [nx, ny] = g.counts();
    let dead = field.get(node) <= threshold;
    let mut nb = Vec::with_capacity(4);
    if i > 0 {
        nb.push(g.index(i - 1, j));
    }
    if i + 1 < nx {
        nb.push(g.index(i + 1, j));
    }
    if g.dim() == 2 {
        if j > 0 {
            nb.push(g.index(i, j - 1));
        }
        if j + 1 < ny {
            nb.push(g.index(i, j + 1));
        }
    }
    nb.into_iter().any(|k| (field.get(k) <= threshold) != dead)
}

fn check_ball(domain: &Domain, field: &ScalarField, x0: usize, r: f64) -> Result<BallRegion> {
    let n = field.grid().dim();
    let c = field.grid().coord(x0);
    if domain.signed_distance(&c[..n]) < r * (1.0 - 1e-12) {
        return Err(Error::BallOutsideDomain {
            center: c[..n].to_vec(),
            radius: r,
        });
    }
    BallRegion::new(c, r)
}

/// Power-law fit `sup_{B_r(x0)} u ~ C r^alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub point: [f64; 2],
    pub fitted_exponent: f64,
    pub fitted_constant: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Root mean square residual of the log-log regression.
    pub residual: f64,
    /// Radii entering the fit, with their sups.
    pub radii: Vec<f64>,
    pub sups: Vec<f64>,
    /// Radii skipped because the sup did not exceed the zero threshold.
    pub skipped: Vec<f64>,
}

impl RateFit {
    /// CSV `r,sup`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "sup"]).map_err(csv_err)?;
        for (r, s) in self.radii.iter().zip(&self.sups) {
            wr.write_record([format!("{r:?}"), format!("{s:?}")]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Least squares of `log sup_{B_r(x0)} u` against `log r`. `x0` must be a free
/// boundary node for `zero_threshold`, every ball must lie in `domain`, radii
/// must be at least `3h` and there must be at least five of them.
pub fn growth_fit(
    field: &ScalarField,
    domain: &Domain,
    x0: usize,
    radii: &[f64],
    zero_threshold: f64,
) -> Result<RateFit> {
    let h = field.grid().h();
    if radii.len() < 5 {
        return Err(Error::Precondition(format!("need at least 5 radii, got {}", radii.len())));
    }
    if let Some(r) = radii.iter().find(|&&r| !(r >= 3.0 * h * (1.0 - 1e-12))) {
        return Err(Error::Precondition(format!("radius {r} below 3h = {}", 3.0 * h)));
    }
    if x0 >= field.grid().len() || !is_on_interface(field, x0, zero_threshold) {
        return Err(Error::Precondition(format!("node {x0} is not a free boundary node")));
    }
    let mut used = Vec::new();
    let mut sups = Vec::new();
    let mut skipped = Vec::new();
    for &r in radii {
        let ball = check_ball(domain, field, x0, r)?;
        let s = sup_over_ball(field, &ball)?;
        if s > zero_threshold {
            used.push(r);
            sups.push(s);
        } else {
            skipped.push(r);
        }
    }
    let xs: Vec<f64> = used.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
    let fit = line_fit(&xs, &ys)
        .ok_or_else(|| Error::Precondition("fewer than two radii with a positive sup".into()))?;
    Ok(RateFit {
        point: field.grid().coord(x0),
        fitted_exponent: fit.slope,
        fitted_constant: fit.intercept.exp(),
        r_min: used[0],
        r_max: *used.last().expect("non-empty"),
        residual: fit.rms,
        radii: used,
        sups,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperGrowthVerdict {
    pub passes: bool,
    pub fitted_exponent: f64,
    /// `beta (1 - tol)`
    pub required: f64,
}

/// Upper growth holds when the fitted exponent is at least `beta (1 - tol)`.
pub fn check_upper_growth(fit: &RateFit, derived: &DerivedExponents, tol: f64) -> UpperGrowthVerdict {
    let required = derived.beta * (1.0 - tol);
    UpperGrowthVerdict {
        passes: fit.fitted_exponent >= required,
        fitted_exponent: fit.fitted_exponent,
        required,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NondegeneracyVerdict {
    NonDegenerate,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub point: [f64; 2],
    pub radii: Vec<f64>,
    pub sups: Vec<f64>,
    /// `sup_{B_r} u / (r - location_tol)^beta_absorption`
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub median_ratio: f64,
    /// Slope of `log ratio` against `log r`; positive means the ratios vanish as `r -> 0`.
    pub decay_exponent: f64,
    /// Ratios strictly decrease as `r` decreases.
    pub monotone_decay: bool,
    /// The exponents satisfy the non-degeneracy condition.
    pub theorem_applies: bool,
    pub verdict: NondegeneracyVerdict,
}

impl NondegeneracyReport {
    /// CSV `r,sup,ratio`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["r", "sup", "ratio"]).map_err(csv_err)?;
        for ((r, s), q) in self.radii.iter().zip(&self.sups).zip(&self.ratios) {
            wr.write_record([format!("{r:?}"), format!("{s:?}"), format!("{q:?}")])
                .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Excess decay exponent above which a monotone ratio sequence counts as vanishing.
pub const DECAY_EXPONENT_CUTOFF: f64 = 0.05;

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Ratios `sup_{B_r(x0)} u / r^beta_absorption` over the given radii. The verdict
/// is degenerate when the minimum drops below a tenth of the median, or when the
/// ratios decay monotonically towards `r = 0` at a fitted rate of at least
/// [`DECAY_EXPONENT_CUTOFF`].
pub fn check_nondegeneracy(
    field: &ScalarField,
    domain: &Domain,
    x0: usize,
    radii: &[f64],
    derived: &DerivedExponents,
) -> Result<NondegeneracyReport> {
    check_nondegeneracy_near(field, domain, x0, radii, derived, 0.0)
}

/// As [`check_nondegeneracy`] for a node known to lie within `location_tol` of
/// the free boundary, e.g. one detected on the grid. The ball around the true
/// point of radius `r - location_tol` sits inside `B_r(x0)`, so the ratios are
/// taken against `(r - location_tol)^beta_absorption`.
pub fn check_nondegeneracy_near(
    field: &ScalarField,
    domain: &Domain,
    x0: usize,
    radii: &[f64],
    derived: &DerivedExponents,
    location_tol: f64,
) -> Result<NondegeneracyReport> {
    if radii.len() < 2 {
        return Err(Error::Precondition("need at least two radii".into()));
    }
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    if !(location_tol >= 0.0 && location_tol < sorted[0]) {
        return Err(Error::Precondition(format!(
            "location tolerance {location_tol} must lie in [0, {})",
            sorted[0]
        )));
    }
    let mut sups = Vec::with_capacity(sorted.len());
    for &r in &sorted {
        sups.push(sup_over_ball(field, &check_ball(domain, field, x0, r)?)?);
    }
    let ratios: Vec<f64> = sorted
        .iter()
        .zip(&sups)
        .map(|(r, s)| s / (r - location_tol).powf(derived.beta_absorption))
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let median_ratio = median(&ratios);
    let monotone_decay = ratios.windows(2).all(|w| w[0] < w[1]);
    let decay_exponent = if ratios.iter().all(|&q| q > 0.0) {
        let xs: Vec<f64> = sorted.iter().map(|r| r.ln()).collect();
        let ys: Vec<f64> = ratios.iter().map(|q| q.ln()).collect();
        line_fit(&xs, &ys).map_or(0.0, |f| f.slope)
    } else {
        f64::INFINITY
    };
    let degenerate = !(min_ratio >= 0.1 * median_ratio)
        || (monotone_decay && decay_exponent >= DECAY_EXPONENT_CUTOFF);
    Ok(NondegeneracyReport {
        point: field.grid().coord(x0),
        radii: sorted,
        sups,
        ratios,
        min_ratio,
        median_ratio,
        decay_exponent,
        monotone_decay,
        theorem_applies: derived.nondegenerate,
        verdict: if degenerate {
            NondegeneracyVerdict::Degenerate
        } else {
            NondegeneracyVerdict::NonDegenerate
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicRow {
    pub k: u32,
    /// `rho 2^-k`
    pub radius: f64,
    pub sup: f64,
    /// `tau 2^(-k beta)`
    pub bound: f64,
    /// `bound - sup`
    pub slack: f64,
    pub passes: bool,
    /// The ball spans at least three cells.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicReport {
    pub point: [f64; 2],
    pub scaling: ScalingMap,
    pub beta: f64,
    pub rows: Vec<DyadicRow>,
    pub all_pass: bool,
    pub all_resolved: bool,
}

impl DyadicReport {
    /// CSV `k,radius,sup,bound,slack,passes,resolved`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "radius", "sup", "bound", "slack", "passes", "resolved"])
            .map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record([
                r.k.to_string(),
                format!("{:?}", r.radius),
                format!("{:?}", r.sup),
                format!("{:?}", r.bound),
                format!("{:?}", r.slack),
                r.passes.to_string(),
                r.resolved.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `sup_{B_{rho 2^-k}(x0)} u <= tau 2^(-k beta)` for `k = 1..=k_max`, with `tau`
/// and `rho` from [`ScalingMap::standard`] using the sup of the field,
/// coefficient norms sampled over the domain and the distance from `x0` to the
/// boundary. Rows whose ball is narrower than `3h` are marked unresolved.
pub fn dyadic_decay_check(
    field: &ScalarField,
    spec: &ProblemSpec,
    x0: usize,
    derived: &DerivedExponents,
    k_max: u32,
    gamma: f64,
) -> Result<DyadicReport> {
    let g = field.grid();
    let n = g.dim();
    let c = g.coord(x0);
    let dist = spec.domain.signed_distance(&c[..n]);
    if !(dist > 0.0) {
        return Err(Error::Precondition(format!("node {x0} is not inside the domain")));
    }
    let norms = spec.norms_over(&spec.domain.sample_points(65));
    let sup_u = field.max().max(0.0);
    let map = ScalingMap::standard(spec.exponents, sup_u, &norms, c, dist, gamma)?;
    let beta = derived.beta;
    let mut rows = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let radius = map.rho * 2f64.powi(-(k as i32));
        let ball = BallRegion::new(c, radius)?;
        let sup = sup_over_ball(field, &ball)?;
        let bound = map.tau * 2f64.powf(-(k as f64) * beta);
        rows.push(DyadicRow {
            k,
            radius,
            sup,
            bound,
            slack: bound - sup,
            passes: sup <= bound,
            resolved: radius >= 3.0 * g.h() * (1.0 - 1e-12),
        });
    }
    Ok(DyadicReport {
        point: c,
        scaling: map,
        beta,
        all_pass: rows.iter().all(|r| r.passes),
        all_resolved: rows.iter().all(|r| r.resolved),
        rows,
    })
}

/// `sup_{B_1/2(0)} u` for a field normalized to `0 <= u <= 1` whose spec has
/// `|a| + |lambda0| <= gamma` and with the origin a dead-core node.
pub fn flatness_probe(field: &ScalarField, spec: &ProblemSpec, gamma: f64, zero_threshold: f64) -> Result<f64> {
    let g = field.grid();
    let n = g.dim();
    let slack = 1e-9;
    if field.min() < -slack || field.max() > 1.0 + slack {
        return Err(Error::Precondition(format!(
            "field must take values in [0, 1], found [{}, {}]",
            field.min(),
            field.max()
        )));
    }
    let norms = spec.norms_over(&spec.domain.sample_points(65));
    if norms.sup_a + norms.sup_lambda0 > gamma * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "|a| + |lambda0| = {} exceeds gamma = {gamma}",
            norms.sup_a + norms.sup_lambda0
        )));
    }
    let origin = g.nearest(&[0.0, 0.0]);
    let xo = g.coord(origin);
    if xo[..n].iter().any(|v| v.abs() > 1e-9 * g.h()) {
        return Err(Error::Precondition("the origin is not a grid node".into()));
    }
    if field.get(origin) > zero_threshold {
        return Err(Error::Precondition(format!(
            "u(0) = {} is above the zero threshold {zero_threshold}",
            field.get(origin)
        )));
    }
    if spec.domain.signed_distance(&xo[..n]) < 0.5 {
        return Err(Error::BallOutsideDomain {
            center: xo[..n].to_vec(),
            radius: 0.5,
        });
    }
    sup_over_ball(field, &BallRegion::new(xo, 0.5)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dichotomy {
    StrictlyPositive,
    IdenticallyZero,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub class: Dichotomy,
    /// `mu` within `1e-3` of `p + 1`, `a >= 0` and `max(0, p) < q < p + 1`.
    pub in_corollary_regime: bool,
    /// Mixed inside the corollary regime.
    pub flagged: bool,
    pub interior_nodes: usize,
    pub dead_nodes: usize,
    pub min_interior: f64,
    pub max_interior: f64,
    pub zero_threshold: f64,
}

/// Classifies the interior (non-Dirichlet) nodes as all positive, all zero or mixed.
pub fn dichotomy_check(field: &ScalarField, spec: &ProblemSpec, zero_threshold: f64) -> Result<DichotomyReport> {
    let fixed = fixed_nodes(spec, field.grid());
    let interior: Vec<f64> = (0..field.grid().len())
        .filter(|&k| !fixed[k])
        .map(|k| field.get(k))
        .collect();
    if interior.is_empty() {
        return Err(Error::Precondition("grid has no interior nodes".into()));
    }
    let dead_nodes = interior.iter().filter(|&&v| v <= zero_threshold).count();
    let class = if dead_nodes == 0 {
        Dichotomy::StrictlyPositive
    } else if dead_nodes == interior.len() {
        Dichotomy::IdenticallyZero
    } else {
        Dichotomy::Mixed
    };
    let ExponentTriple { p, q, mu } = spec.exponents;
    let norms = spec.norms_over(&spec.domain.sample_points(65));
    let in_corollary_regime =
        (p + 1.0 - mu) <= 1e-3 * (1.0 + 1e-9) && norms.inf_a >= 0.0 && p.max(0.0) < q && q < p + 1.0;
    Ok(DichotomyReport {
        class,
        in_corollary_regime,
        flagged: in_corollary_regime && class == Dichotomy::Mixed,
        interior_nodes: interior.len(),
        dead_nodes,
        min_interior: interior.iter().copied().fold(f64::INFINITY, f64::min),
        max_interior: interior.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        zero_threshold,
    })
}
