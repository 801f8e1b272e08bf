use serde::{Deserialize, Serialize};

use super::matrix::{eig2, SymMatrix};
use crate::error::{Error, Result};

/// Ellipticity bounds `0 < lambda <= Lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityPair {
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub upper: f64,
}

impl EllipticityPair {
    pub fn new(lambda: f64, upper: f64) -> Result<Self> {
        let e = Self { lambda, upper };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.lambda <= self.upper && self.upper.is_finite() {
            Ok(())
        } else {
            Err(Error::Ellipticity {
                lambda: self.lambda,
                upper: self.upper,
            })
        }
    }
}

/// `Lambda * sum(positive eigenvalues) + lambda * sum(negative eigenvalues)`.
pub fn pucci_plus(m: &SymMatrix, ell: EllipticityPair) -> f64 {
    let e = m.eigenvalues();
    pucci_from_eigs(&e[..m.dim()], ell.upper, ell.lambda)
}

/// `lambda * sum(positive eigenvalues) + Lambda * sum(negative eigenvalues)`.
pub fn pucci_minus(m: &SymMatrix, ell: EllipticityPair) -> f64 {
    let e = m.eigenvalues();
    pucci_from_eigs(&e[..m.dim()], ell.lambda, ell.upper)
}

/// `sup tr(A H)` over `lambda I <= A <= Lambda I` for `H = [[a, b], [b, c]]`,
/// with `a11 + a22 - |a12|` of the maximizer.
#[inline]
fn pucci_plus_branch(a: f64, b: f64, c: f64, ell: EllipticityPair) -> (f64, f64) {
    let (lo, hi) = eig2(a, b, c);
    let (up, low) = (ell.upper, ell.lambda);
    if lo >= 0.0 {
        (up * (lo + hi), 2.0 * up)
    } else if hi < 0.0 {
        (low * (lo + hi), 2.0 * low)
    } else {
        // A = lambda I + (Lambda - lambda) v v^T with v the top eigenvector.
        let (v1, v2) = (b, hi - a);
        let nn = v1 * v1 + v2 * v2;
        let cross = if nn > 0.0 { (v1 * v2).abs() / nn } else { 0.0 };
        (up * hi + low * lo, up + low - (up - low) * cross)
    }
}

/// Upper Pucci operator of the monotone two-dimensional stencil. The maximizer
/// over `a12 >= 0` (paired with `xp`) is the unconstrained one when `xp >= 0`
/// and a diagonal matrix otherwise; symmetrically for `a12 <= 0` and `xm`.
#[inline]
fn pucci_plus_split(dxx: f64, dyy: f64, xp: f64, xm: f64, ell: EllipticityPair) -> (f64, f64) {
    let w = |d: f64| if d >= 0.0 { ell.upper } else { ell.lambda };
    let diag = (w(dxx) * dxx + w(dyy) * dyy, w(dxx) + w(dyy));
    let plus = if xp >= 0.0 { pucci_plus_branch(dxx, xp, dyy, ell) } else { diag };
    let minus = if xm <= 0.0 { pucci_plus_branch(dxx, xm, dyy, ell) } else { diag };
    if plus.0 >= minus.0 {
        plus
    } else {
        minus
    }
}

#[inline]
fn pucci_from_eigs(eigs: &[f64], pos_weight: f64, neg_weight: f64) -> f64 {
    eigs.iter()
        .map(|&e| if e > 0.0 { pos_weight * e } else { neg_weight * e })
        .sum()
}

/// The fully nonlinear operator `F` chosen from a fixed menu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    Trace,
    PucciPlus,
    PucciMinus,
    /// `min(tr(A1 M), tr(A2 M))` with `A1, A2` in `[lambda I, Lambda I]`.
    MinOfTwoTraces { weights: [SymMatrix; 2] },
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Trace => "trace",
            OperatorKind::PucciPlus => "pucci_plus",
            OperatorKind::PucciMinus => "pucci_minus",
            OperatorKind::MinOfTwoTraces { .. } => "min_of_two_traces",
        }
    }

    /// Checks that the operator satisfies the extremal sandwich for `ell`
    /// on `n x n` matrices.
    pub fn validate(&self, ell: EllipticityPair, n: usize) -> Result<()> {
        ell.validate()?;
        match self {
            OperatorKind::Trace => {
                if ell.lambda > 1.0 || ell.upper < 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "trace operator needs lambda <= 1 <= Lambda, got ({}, {})",
                        ell.lambda, ell.upper
                    )));
                }
            }
            OperatorKind::PucciPlus | OperatorKind::PucciMinus => {}
            OperatorKind::MinOfTwoTraces { weights } => {
                for w in weights {
                    if w.dim() != n {
                        return Err(Error::MatrixSize(w.dim()));
                    }
                    let eigs = w.eigenvalue_list();
                    let tol = 1e-12 * ell.upper.max(1.0);
                    if eigs
                        .iter()
                        .any(|&e| e < ell.lambda - tol || e > ell.upper + tol)
                    {
                        return Err(Error::WeightOutOfRange { eigenvalues: eigs });
                    }
                }
            }
        }
        Ok(())
    }

    /// `F(M)`.
    pub fn apply(&self, m: &SymMatrix, ell: EllipticityPair) -> f64 {
        match self {
            OperatorKind::Trace => m.trace(),
            OperatorKind::PucciPlus => pucci_plus(m, ell),
            OperatorKind::PucciMinus => pucci_minus(m, ell),
            OperatorKind::MinOfTwoTraces { weights } => {
                m.weighted_trace(&weights[0]).min(m.weighted_trace(&weights[1]))
            }
        }
    }

    /// `F` on a 2x2 matrix given by entries, without building a [`SymMatrix`].
    #[inline]
    pub fn apply2(&self, a11: f64, a12: f64, a22: f64, ell: EllipticityPair) -> f64 {
        match self {
            OperatorKind::Trace => a11 + a22,
            OperatorKind::PucciPlus => {
                let (lo, hi) = eig2(a11, a12, a22);
                pucci_from_eigs(&[lo, hi], ell.upper, ell.lambda)
            }
            OperatorKind::PucciMinus => {
                let (lo, hi) = eig2(a11, a12, a22);
                pucci_from_eigs(&[lo, hi], ell.lambda, ell.upper)
            }
            OperatorKind::MinOfTwoTraces { weights } => {
                let t = |w: &SymMatrix| {
                    w.get(0, 0) * a11 + 2.0 * w.get(0, 1) * a12 + w.get(1, 1) * a22
                };
                t(&weights[0]).min(t(&weights[1]))
            }
        }
    }

    /// `F` on a 1x1 matrix.
    #[inline]
    pub fn apply1(&self, a: f64, ell: EllipticityPair) -> f64 {
        match self {
            OperatorKind::Trace => a,
            OperatorKind::PucciPlus => pucci_from_eigs(&[a], ell.upper, ell.lambda),
            OperatorKind::PucciMinus => pucci_from_eigs(&[a], ell.lambda, ell.upper),
            OperatorKind::MinOfTwoTraces { weights } => {
                (weights[0].get(0, 0) * a).min(weights[1].get(0, 0) * a)
            }
        }
    }

    /// `F` on a 2x2 matrix together with `tr(A)` of the active linear
    /// branch, i.e. the derivative of `F(M + t I)` at `t = 0+`.
    #[inline]
    pub fn apply2_weighted(&self, a11: f64, a12: f64, a22: f64, ell: EllipticityPair) -> (f64, f64) {
        let pucci = |lo: f64, hi: f64, pos: f64, neg: f64| {
            let w = |e: f64| if e >= 0.0 { pos } else { neg };
            (w(lo) * lo + w(hi) * hi, w(lo) + w(hi))
        };
        match self {
            OperatorKind::Trace => (a11 + a22, 2.0),
            OperatorKind::PucciPlus => {
                let (lo, hi) = eig2(a11, a12, a22);
                pucci(lo, hi, ell.upper, ell.lambda)
            }
            OperatorKind::PucciMinus => {
                let (lo, hi) = eig2(a11, a12, a22);
                pucci(lo, hi, ell.lambda, ell.upper)
            }
            OperatorKind::MinOfTwoTraces { weights } => {
                let t = |w: &SymMatrix| w.get(0, 0) * a11 + 2.0 * w.get(0, 1) * a12 + w.get(1, 1) * a22;
                let (t0, t1) = (t(&weights[0]), t(&weights[1]));
                if t0 <= t1 {
                    (t0, weights[0].trace())
                } else {
                    (t1, weights[1].trace())
                }
            }
        }
    }

    /// Monotone discrete `F` in two dimensions from the second differences
    /// `dxx`, `dyy` and the two one-diagonal mixed differences
    ///
    /// `xp = (u_ne + u_sw + 2 u - u_e - u_w - u_n - u_s) / (2 h^2)`,
    /// `xm = -(u_nw + u_se + 2 u - u_e - u_w - u_n - u_s) / (2 h^2)`.
    ///
    /// Each linear branch `tr(A D^2 u)` takes the mixed difference matching the
    /// sign of `a12`, so the stencil has non-negative neighbour weights whenever
    /// `a_ii >= |a12|`. Returns the value and `a11 + a22 - |a12|` of the active
    /// branch, which is `h^2 / 2` times the weight of the centre node.
    #[inline]
    pub fn apply2_monotone(&self, dxx: f64, dyy: f64, xp: f64, xm: f64, ell: EllipticityPair) -> (f64, f64) {
        match self {
            OperatorKind::Trace => (dxx + dyy, 2.0),
            OperatorKind::PucciPlus => pucci_plus_split(dxx, dyy, xp, xm, ell),
            OperatorKind::PucciMinus => {
                let (v, w) = pucci_plus_split(-dxx, -dyy, -xp, -xm, ell);
                (-v, w)
            }
            OperatorKind::MinOfTwoTraces { weights } => {
                let branch = |w: &SymMatrix| {
                    let a12 = w.get(0, 1);
                    let x = if a12 >= 0.0 { xp } else { xm };
                    (
                        w.get(0, 0) * dxx + 2.0 * a12 * x + w.get(1, 1) * dyy,
                        w.trace() - a12.abs(),
                    )
                };
                let (b0, b1) = (branch(&weights[0]), branch(&weights[1]));
                if b0.0 <= b1.0 {
                    b0
                } else {
                    b1
                }
            }
        }
    }

    /// One-dimensional analogue of [`OperatorKind::apply2_weighted`].
    #[inline]
    pub fn apply1_weighted(&self, a: f64, ell: EllipticityPair) -> (f64, f64) {
        let w = match self {
            OperatorKind::Trace => 1.0,
            OperatorKind::PucciPlus => {
                if a >= 0.0 {
                    ell.upper
                } else {
                    ell.lambda
                }
            }
            OperatorKind::PucciMinus => {
                if a >= 0.0 {
                    ell.lambda
                } else {
                    ell.upper
                }
            }
            OperatorKind::MinOfTwoTraces { weights } => {
                let (w0, w1) = (weights[0].get(0, 0), weights[1].get(0, 0));
                if w0 * a <= w1 * a {
                    w0
                } else {
                    w1
                }
            }
        };
        (w * a, w)
    }

    /// Upper bound of `F(M) - F(M - t I) / t` over all `M`, used to
    /// normalise explicit steps.
    pub fn diagonal_bound(&self, n: usize, ell: EllipticityPair) -> f64 {
        match self {
            OperatorKind::Trace => n as f64,
            OperatorKind::PucciPlus | OperatorKind::PucciMinus => n as f64 * ell.upper,
            OperatorKind::MinOfTwoTraces { weights } => weights[0].trace().max(weights[1].trace()),
        }
    }
}
