use serde::{Deserialize, Serialize};

use super::exponents::ExponentTriple;
use super::spec::{CoefficientNorms, DomainKind, ProblemSpec};
use crate::error::{Error, Result};

/// `v(x) = u(center + rho x) / tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingMap {
    pub tau: f64,
    pub rho: f64,
    pub center: [f64; 2],
    /// Smallness target: the rescaled coefficients are meant to satisfy
    /// `|a1| <= gamma / 2` and `|lambda1| <= gamma / 2`.
    pub gamma: Option<f64>,
}

/// Sup norms of the rescaled coefficients, to compare with `gamma / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaledNorms {
    pub sup_a: f64,
    pub sup_lambda0: f64,
    pub target: f64,
}

impl ScalingMap {
    pub fn new(tau: f64, rho: f64, center: [f64; 2]) -> Result<Self> {
        if !(tau > 0.0 && rho > 0.0 && tau.is_finite() && rho.is_finite()) {
            return Err(Error::InvalidScaling { tau, rho });
        }
        Ok(Self {
            tau,
            rho,
            center,
            gamma: None,
        })
    }

    pub fn identity() -> Self {
        Self {
            tau: 1.0,
            rho: 1.0,
            center: [0.0; 2],
            gamma: None,
        }
    }

    /// The normalization used for the improved regularity estimate:
    ///
    /// `tau = max{1, sup u, (2|a|)^(1/(1+p-q)), (2|lambda0|)^(1/(p+1-mu))}`,
    /// `rho = min{dist / 2, gamma^(1/(p+2-q))}`, additionally capped at 1.
    pub fn standard(
        exponents: ExponentTriple,
        sup_u: f64,
        norms: &CoefficientNorms,
        center: [f64; 2],
        dist: f64,
        gamma: f64,
    ) -> Result<Self> {
        let ExponentTriple { p, q, mu } = exponents;
        if !(gamma > 0.0) {
            return Err(Error::Precondition(format!("gamma = {gamma} must be positive")));
        }
        let tau = 1.0f64
            .max(sup_u)
            .max((2.0 * norms.sup_a).powf(1.0 / (1.0 + p - q)))
            .max((2.0 * norms.sup_lambda0).powf(1.0 / (p + 1.0 - mu)));
        let rho = (dist / 2.0).min(gamma.powf(1.0 / (p + 2.0 - q))).min(1.0);
        let mut map = Self::new(tau, rho, center)?;
        map.gamma = Some(gamma);
        Ok(map)
    }

    /// The map undoing `self`: rescaling by `self` and then by the inverse is the identity.
    pub fn inverse(&self) -> Self {
        Self {
            tau: 1.0 / self.tau,
            rho: 1.0 / self.rho,
            center: [-self.center[0] / self.rho, -self.center[1] / self.rho],
            gamma: None,
        }
    }

    /// Factor multiplying `a(center + rho x)`.
    pub fn a_factor(&self, e: ExponentTriple) -> f64 {
        self.rho.powf(e.p - e.q + 2.0) / self.tau.powf(e.p - e.q + 1.0)
    }

    /// Factor multiplying `lambda0(center + rho x)`.
    pub fn lambda_factor(&self, e: ExponentTriple) -> f64 {
        self.rho.powf(e.p + 2.0) / self.tau.powf(e.p + 1.0 - e.mu)
    }

    /// Rescaled coefficient norms given norms of the originals over the ball.
    pub fn rescaled_norms(&self, e: ExponentTriple, norms: &CoefficientNorms) -> RescaledNorms {
        RescaledNorms {
            sup_a: self.a_factor(e) * norms.sup_a,
            sup_lambda0: self.lambda_factor(e) * norms.sup_lambda0,
            target: self.gamma.map_or(f64::INFINITY, |g| g / 2.0),
        }
    }
}

/// Spec solved by `u(center + rho x) / tau`. Requires `B_rho(center)` inside the domain.
pub fn rescale_spec(spec: &ProblemSpec, map: &ScalingMap) -> Result<ProblemSpec> {
    ScalingMap::new(map.tau, map.rho, map.center)?;
    let n = spec.dim();
    let dist = spec.domain.signed_distance(&map.center[..n]);
    if dist < map.rho * (1.0 - 1e-12) {
        return Err(Error::BallOutsideDomain {
            center: map.center[..n].to_vec(),
            radius: map.rho,
        });
    }
    Ok(rescale_coefficients(spec, map))
}

/// Coefficient and domain transformation of [`rescale_spec`] without the ball check.
pub fn rescale_coefficients(spec: &ProblemSpec, map: &ScalingMap) -> ProblemSpec {
    let e = spec.exponents;
    let mut out = spec.clone();
    let (c, s) = (map.center, map.rho);
    out.coeff.a = spec.coeff.a.rescaled(map.a_factor(e), c, s);
    out.coeff.lambda0 = spec.coeff.lambda0.rescaled(map.lambda_factor(e), c, s);
    out.boundary.g = spec.boundary.g.rescaled(1.0 / map.tau, c, s);
    let n = spec.dim();
    out.domain.extent = match spec.domain.kind {
        DomainKind::Box => (0..2 * n)
            .map(|i| (spec.domain.extent[i] - c[i / 2]) / s)
            .collect(),
        DomainKind::Ball => (0..n)
            .map(|k| (spec.domain.extent[k] - c[k]) / s)
            .chain(std::iter::once(spec.domain.extent[n] / s))
            .collect(),
    };
    out
}

/// Coefficient factors of the dyadic step `v2(x) = 2^beta v1(x / 2)`:
/// `(2^(beta(p+1-q)-p-2+q), 2^(beta(p+1-mu)-p-2))`.
pub fn dyadic_step_factors(e: ExponentTriple, beta: f64) -> (f64, f64) {
    let ExponentTriple { p, q, mu } = e;
    (
        2f64.powf(beta * (p + 1.0 - q) - p - 2.0 + q),
        2f64.powf(beta * (p + 1.0 - mu) - p - 2.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::beta_exponent;
    use crate::model::spec::{test_spec, Domain};
    use proptest::prelude::*;

    #[test]
    fn identity_scaling_is_identity() {
        let mut spec = test_spec(1.0, 1.5, 0.5, "1 + x1", "2 * |x|^0.5", "|x|");
        spec.domain = Domain::ball(&[0.0, 0.0], 1.0);
        let out = rescale_spec(&spec, &ScalingMap::identity()).unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn tau_choice_example() {
        let e = ExponentTriple::new(1.0, 1.5, 0.5).unwrap();
        let norms = CoefficientNorms {
            sup_a: 1.0,
            sup_lambda0: 1.0,
            inf_lambda0: 1.0,
            inf_a: 1.0,
        };
        let map = ScalingMap::standard(e, 1.0, &norms, [0.0; 2], 1.0, 1.0).unwrap();
        assert!((map.tau - 4.0).abs() < 1e-14);
        assert_eq!(map.rho, 0.5);
        let r = map.rescaled_norms(e, &norms);
        assert!(r.sup_a <= r.target && r.sup_lambda0 <= r.target);
    }

    #[test]
    fn rejects_bad_maps() {
        assert!(matches!(ScalingMap::new(0.0, 1.0, [0.0; 2]), Err(Error::InvalidScaling { .. })));
        assert!(ScalingMap::new(1.0, -1.0, [0.0; 2]).is_err());
        let spec = test_spec(0.0, 0.0, 0.0, "0", "1", "1");
        let map = ScalingMap::new(1.0, 0.3, [0.3, 0.0]).unwrap();
        assert!(matches!(rescale_spec(&spec, &map), Err(Error::BallOutsideDomain { .. })));
    }

    #[test]
    fn rescaled_spec_matches_factors() {
        let spec = test_spec(1.0, 1.5, 0.5, "1 + x1", "3 + |x|^2", "1");
        let map = ScalingMap::new(2.0, 0.25, [0.1, -0.1]).unwrap();
        let out = rescale_spec(&spec, &map).unwrap();
        let x = [0.3, 0.7];
        let y = [0.1 + 0.25 * 0.3, -0.1 + 0.25 * 0.7];
        let ka = 0.25f64.powf(1.5) / 2.0f64.powf(0.5);
        let kl = 0.25f64.powf(3.0) / 2.0f64.powf(1.5);
        assert!((out.a(&x) - ka * spec.a(&y)).abs() < 1e-14);
        assert!((out.lambda0(&x) - kl * spec.lambda0(&y)).abs() < 1e-14);
        assert!((out.g(&x) - 0.5).abs() < 1e-15);
        assert!(out.domain.contains(&[-0.4 / 0.25 + 1e-9, 0.0]));
    }

    proptest! {
        #[test]
        fn inverse_restores_coefficients(tau in 0.5f64..50.0, rho in 0.01f64..1.0,
                                         cx in -0.4f64..0.4, cy in -0.4f64..0.4,
                                         x in -0.5f64..0.5, y in -0.5f64..0.5) {
            let spec = test_spec(0.5, 0.8, 0.4, "1 + |x|^1.5 + x2", "2 + x1 * x2", "|x|^2");
            let map = ScalingMap::new(tau, rho, [cx, cy]).unwrap();
            let back = rescale_coefficients(&rescale_coefficients(&spec, &map), &map.inverse());
            for (a, b) in [(back.a(&[x, y]), spec.a(&[x, y])),
                           (back.lambda0(&[x, y]), spec.lambda0(&[x, y])),
                           (back.g(&[x, y]), spec.g(&[x, y]))] {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }

        #[test]
        fn dyadic_factors_do_not_grow(p in -0.9f64..3.0, qf in 0.0f64..0.99, mf in 0.0f64..0.99) {
            let e = ExponentTriple::new(p, qf * (p + 1.0), mf * (p + 1.0)).unwrap();
            let d = beta_exponent(e).unwrap();
            let (fa, fl) = dyadic_step_factors(e, d.beta);
            prop_assert!(fa <= 1.0 + 1e-12 && fl <= 1.0 + 1e-12);
        }
    }
}
