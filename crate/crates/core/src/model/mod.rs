//! Equation data, the operator menu, exponent calculus and rescaling maps.

mod exponents;
mod matrix;
mod operator;
mod scaling;
mod spec;

pub use exponents::{beta_exponent, DerivedExponents, ExponentTriple};
pub use matrix::{eig2, SymMatrix, SYMMETRY_TOL};
pub use operator::{pucci_minus, pucci_plus, EllipticityPair, OperatorKind};
pub use scaling::{dyadic_step_factors, rescale_coefficients, rescale_spec, RescaledNorms, ScalingMap};
pub use spec::{
    full_operator, normalization_kappa, operator_with_f, BoundaryData, CoefficientFields, CoefficientNorms, Domain,
    DomainKind, ProblemSpec,
};

#[cfg(test)]
pub(crate) use spec::test_spec;

/// `x^e` for `x >= 0` with exact shortcuts for the exponents that dominate the test suite.
/// `0^0 = 1`.
#[inline]
pub fn pow(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 1.5 {
        x * x.sqrt()
    } else {
        x.powf(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pucci_duality_and_sandwich(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0,
                                      l1 in 0.0f64..5.0, l2 in 0.0f64..5.0, t in 0.0f64..6.3,
                                      lam in 0.1f64..1.0, up in 1.0f64..4.0) {
            let ell = EllipticityPair::new(lam, up).unwrap();
            let m = SymMatrix::sym2(a, b, c);
            prop_assert!((pucci_plus(&m, ell) + pucci_minus(&m.scaled(-1.0), ell)).abs() <= 1e-12 * (1.0 + a.abs() + b.abs() + c.abs()));
            let (cs, sn) = (t.cos(), t.sin());
            let n = SymMatrix::sym2(l1 * cs * cs + l2 * sn * sn, (l1 - l2) * cs * sn, l1 * sn * sn + l2 * cs * cs);
            let kinds = [
                OperatorKind::Trace,
                OperatorKind::PucciPlus,
                OperatorKind::PucciMinus,
                OperatorKind::MinOfTwoTraces { weights: [SymMatrix::sym2(lam, 0.0, up), SymMatrix::identity(2).scaled(up)] },
            ];
            for k in &kinds {
                if k.validate(ell, 2).is_err() {
                    continue;
                }
                let d = k.apply(&m.add(&n), ell) - k.apply(&m, ell);
                let tol = 1e-12 * (10.0 + d.abs());
                prop_assert!(pucci_minus(&n, ell) - tol <= d && d <= pucci_plus(&n, ell) + tol);
            }
        }
    }

    #[test]
    fn pow_shortcuts_agree() {
        for x in [0.0f64, 1e-300, 0.3, 2.0, 17.5] {
            for e in [0.0, 0.5, 1.0, 1.5, 2.0, 0.7] {
                let r = if x == 0.0 && e == 0.0 { 1.0 } else { x.powf(e) };
                assert!((pow(x, e) - r).abs() <= 1e-15 * (1.0 + r), "{x}^{e}");
            }
        }
    }
}
