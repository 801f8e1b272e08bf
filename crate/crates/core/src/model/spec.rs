use serde::{Deserialize, Serialize};

use super::exponents::ExponentTriple;
use super::matrix::SymMatrix;
use super::operator::{EllipticityPair, OperatorKind};
use super::pow;
use crate::error::{Error, Result};
use crate::expr::Coefficient;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Box,
    Ball,
}

/// Axis-aligned box or ball in dimension 1 or 2.
///
/// `extent` is `[lo1, hi1]` / `[lo1, hi1, lo2, hi2]` for boxes and
/// `[c1, r]` / `[c1, c2, r]` for balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub dim: usize,
    pub kind: DomainKind,
    pub extent: Vec<f64>,
}

impl Domain {
    pub fn square(half_width: f64) -> Self {
        Self {
            dim: 2,
            kind: DomainKind::Box,
            extent: vec![-half_width, half_width, -half_width, half_width],
        }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            dim: 1,
            kind: DomainKind::Box,
            extent: vec![lo, hi],
        }
    }

    pub fn ball(center: &[f64], radius: f64) -> Self {
        let mut extent = center.to_vec();
        extent.push(radius);
        Self {
            dim: center.len(),
            kind: DomainKind::Ball,
            extent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::InvalidSpec(format!("domain dimension {} not in {{1, 2}}", self.dim)));
        }
        let expected = match self.kind {
            DomainKind::Box => 2 * self.dim,
            DomainKind::Ball => self.dim + 1,
        };
        if self.extent.len() != expected {
            return Err(Error::InvalidSpec(format!(
                "domain extent has {} entries, expected {expected}",
                self.extent.len()
            )));
        }
        if self.extent.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("domain extent is not finite".into()));
        }
        match self.kind {
            DomainKind::Box => {
                for k in 0..self.dim {
                    if self.extent[2 * k + 1] <= self.extent[2 * k] {
                        return Err(Error::InvalidSpec(format!("empty box along axis {}", k + 1)));
                    }
                }
            }
            DomainKind::Ball => {
                if self.extent[self.dim] <= 0.0 {
                    return Err(Error::InvalidSpec("ball radius must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Bounding box as `(lo, hi)`; unused axes are zero.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for k in 0..self.dim {
            match self.kind {
                DomainKind::Box => {
                    lo[k] = self.extent[2 * k];
                    hi[k] = self.extent[2 * k + 1];
                }
                DomainKind::Ball => {
                    let r = self.extent[self.dim];
                    lo[k] = self.extent[k] - r;
                    hi[k] = self.extent[k] + r;
                }
            }
        }
        (lo, hi)
    }

    /// Closed-domain membership with a relative slack of `1e-12`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) >= -1e-12 * self.diameter()
    }

    /// Distance to the boundary, positive inside and negative outside.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self.kind {
            DomainKind::Box => (0..self.dim)
                .map(|k| (x[k] - self.extent[2 * k]).min(self.extent[2 * k + 1] - x[k]))
                .fold(f64::INFINITY, f64::min),
            DomainKind::Ball => {
                let r = self.extent[self.dim];
                let d: f64 = (0..self.dim).map(|k| (x[k] - self.extent[k]).powi(2)).sum();
                r - d.sqrt()
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (0..self.dim).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Lattice points inside the domain, `per_axis` per coordinate of the bounding box.
    pub fn sample_points(&self, per_axis: usize) -> Vec<[f64; 2]> {
        let (lo, hi) = self.bounding_box();
        let m = per_axis.max(2);
        let coord = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / (m - 1) as f64;
        let mut pts = Vec::new();
        let ny = if self.dim == 2 { m } else { 1 };
        for j in 0..ny {
            for i in 0..m {
                let x = [coord(0, i), if self.dim == 2 { coord(1, j) } else { 0.0 }];
                if self.contains(&x[..self.dim]) {
                    pts.push(x);
                }
            }
        }
        pts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientFields {
    pub a: Coefficient,
    pub lambda0: Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub g: Coefficient,
}

/// Full data of the Dirichlet problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub exponents: ExponentTriple,
    pub ellipticity: EllipticityPair,
    pub operator: OperatorKind,
    pub coeff: CoefficientFields,
    pub boundary: BoundaryData,
    pub domain: Domain,
}

/// Sup and inf of the coefficients over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientNorms {
    pub sup_a: f64,
    pub sup_lambda0: f64,
    pub inf_lambda0: f64,
    pub inf_a: f64,
}

impl ProblemSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn a(&self, x: &[f64]) -> f64 {
        self.coeff.a.eval(x)
    }

    pub fn lambda0(&self, x: &[f64]) -> f64 {
        self.coeff.lambda0.eval(x)
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        self.boundary.g.eval(x)
    }

    /// Coefficient norms over `points` (grid-dependent stand-ins for the sup norms).
    pub fn norms_over(&self, points: &[[f64; 2]]) -> CoefficientNorms {
        let n = self.dim();
        let mut out = CoefficientNorms {
            sup_a: 0.0,
            sup_lambda0: 0.0,
            inf_lambda0: f64::INFINITY,
            inf_a: f64::INFINITY,
        };
        for x in points {
            let a = self.a(&x[..n]);
            let l = self.lambda0(&x[..n]);
            out.sup_a = out.sup_a.max(a.abs());
            out.inf_a = out.inf_a.min(a);
            out.sup_lambda0 = out.sup_lambda0.max(l.abs());
            out.inf_lambda0 = out.inf_lambda0.min(l);
        }
        out
    }

    /// Every violated invariant, in a fixed order. Empty means valid.
    pub fn violations(&self) -> Vec<Error> {
        let mut errs = Vec::new();
        if let Err(e) = self.exponents.validate() {
            errs.push(e);
        }
        if let Err(e) = self.domain.validate() {
            errs.push(e);
            return errs;
        }
        if let Err(e) = self.operator.validate(self.ellipticity, self.dim()) {
            errs.push(e);
        }
        let n = self.dim();
        let pts = self.domain.sample_points(65);
        let norms = self.norms_over(&pts);
        if !(norms.inf_lambda0 > 0.0) {
            errs.push(Error::InvalidSpec(format!(
                "lambda0 must be positive: sampled inf = {}",
                norms.inf_lambda0
            )));
        }
        if pts.iter().any(|x| !self.a(&x[..n]).is_finite() || !self.lambda0(&x[..n]).is_finite()) {
            errs.push(Error::InvalidSpec("coefficient is not finite somewhere in the domain".into()));
        }
        let gmin = self
            .boundary_samples(256)
            .iter()
            .map(|x| self.g(&x[..n]))
            .fold(f64::INFINITY, |m, v| if v.is_nan() { f64::NAN } else { m.min(v) });
        if !(gmin >= 0.0) {
            errs.push(Error::InvalidSpec(format!("boundary datum must be non-negative: sampled min = {gmin}")));
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn boundary_samples(&self, m: usize) -> Vec<[f64; 2]> {
        let (lo, hi) = self.domain.bounding_box();
        match (self.domain.kind, self.dim()) {
            (_, 1) => vec![[lo[0], 0.0], [hi[0], 0.0]],
            (DomainKind::Box, _) => {
                let mut pts = Vec::with_capacity(4 * m);
                for i in 0..m {
                    let t = i as f64 / (m - 1) as f64;
                    let x = lo[0] + t * (hi[0] - lo[0]);
                    let y = lo[1] + t * (hi[1] - lo[1]);
                    pts.extend([[x, lo[1]], [x, hi[1]], [lo[0], y], [hi[0], y]]);
                }
                pts
            }
            (DomainKind::Ball, _) => {
                let c = [self.domain.extent[0], self.domain.extent[1]];
                let r = self.domain.extent[2];
                (0..m)
                    .map(|i| {
                        let t = std::f64::consts::TAU * i as f64 / m as f64;
                        [c[0] + r * t.cos(), c[1] + r * t.sin()]
                    })
                    .collect()
            }
        }
    }
}

/// `m^p F(hess) + a(x) |grad|^q - lambda0(x) max(u, 0)^mu` with `m = sqrt(|grad|^2 + eps^2)`.
///
/// Only the degenerate factor is regularized; the Hamiltonian uses the exact gradient
/// so that a small `q` does not inject a spurious source `a eps^q` into flat regions.
pub fn full_operator(
    x: &[f64],
    grad: &[f64],
    hess: &SymMatrix,
    u_val: f64,
    spec: &ProblemSpec,
    eps_reg: f64,
) -> Result<f64> {
    let f = spec.operator.apply(hess, spec.ellipticity);
    operator_with_f(x, grad.iter().map(|v| v * v).sum(), f, u_val, spec, eps_reg)
}

/// [`full_operator`] from `|grad|^2` and an already evaluated `F(D^2 u)`,
/// e.g. by a discrete stencil.
pub fn operator_with_f(x: &[f64], g2: f64, f: f64, u_val: f64, spec: &ProblemSpec, eps_reg: f64) -> Result<f64> {
    let ExponentTriple { p, q, mu } = spec.exponents;
    if p < 0.0 && eps_reg == 0.0 && g2 == 0.0 {
        return Err(Error::SingularEvaluation { p });
    }
    let m = (g2 + eps_reg * eps_reg).sqrt();
    let a = spec.a(x);
    let hamiltonian = if a == 0.0 { 0.0 } else { a * pow(g2.sqrt(), q) };
    Ok(pow(m, p) * f + hamiltonian - spec.lambda0(x) * pow(u_val.max(0.0), mu))
}

/// `max{1, sup_u, |a|^(1/(p+1-q)), |lambda0|^(1/(p+1-mu))}`.
pub fn normalization_kappa(spec: &ProblemSpec, sup_u: f64, norms: &CoefficientNorms) -> f64 {
    let ExponentTriple { p, q, mu } = spec.exponents;
    1.0f64
        .max(sup_u)
        .max(norms.sup_a.powf(1.0 / (p + 1.0 - q)))
        .max(norms.sup_lambda0.powf(1.0 / (p + 1.0 - mu)))
}

#[cfg(test)]
pub(crate) fn test_spec(p: f64, q: f64, mu: f64, a: &str, lambda0: &str, g: &str) -> ProblemSpec {
    ProblemSpec {
        exponents: ExponentTriple::new(p, q, mu).unwrap(),
        ellipticity: EllipticityPair::new(1.0, 1.0).unwrap(),
        operator: OperatorKind::Trace,
        coeff: CoefficientFields {
            a: Coefficient::parse(a).unwrap(),
            lambda0: Coefficient::parse(lambda0).unwrap(),
        },
        boundary: BoundaryData {
            g: Coefficient::parse(g).unwrap(),
        },
        domain: Domain::square(0.5),
    }
}
