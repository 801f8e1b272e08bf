use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degeneracy exponent `p`, Hamiltonian exponent `q`, absorption exponent `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentTriple {
    pub p: f64,
    pub q: f64,
    pub mu: f64,
}

impl ExponentTriple {
    pub fn new(p: f64, q: f64, mu: f64) -> Result<Self> {
        let e = Self { p, q, mu };
        e.validate()?;
        Ok(e)
    }

    /// `p > -1`, `0 <= q < p + 1`, `0 <= mu < p + 1`.
    pub fn validate(&self) -> Result<()> {
        let Self { p, q, mu } = *self;
        if !(p.is_finite() && q.is_finite() && mu.is_finite()) {
            return Err(Error::ExponentRange(format!("non-finite exponent in {self:?}")));
        }
        if p <= -1.0 {
            return Err(Error::ExponentRange(format!("p = {p} must exceed -1")));
        }
        if !(0.0..p + 1.0).contains(&q) {
            return Err(Error::ExponentRange(format!("q = {q} must lie in [0, p + 1 = {})", p + 1.0)));
        }
        if !(0.0..p + 1.0).contains(&mu) {
            return Err(Error::ExponentRange(format!("mu = {mu} must lie in [0, p + 1 = {})", p + 1.0)));
        }
        Ok(())
    }
}

/// Growth exponent and its two competitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedExponents {
    pub beta: f64,
    /// `(p + 2 - q) / (p + 1 - q)`
    pub beta_hamiltonian: f64,
    /// `(p + 2) / (p + 1 - mu)`
    pub beta_absorption: f64,
    /// `beta_absorption <= beta_hamiltonian`
    pub nondegenerate: bool,
}

pub fn beta_exponent(exp: ExponentTriple) -> Result<DerivedExponents> {
    let ExponentTriple { p, q, mu } = exp;
    if q == p + 1.0 || mu == p + 1.0 {
        return Err(Error::ExponentRange(format!(
            "denominator vanishes: q = {q}, mu = {mu}, p + 1 = {}",
            p + 1.0
        )));
    }
    exp.validate()?;
    let beta_hamiltonian = (p + 2.0 - q) / (p + 1.0 - q);
    let beta_absorption = (p + 2.0) / (p + 1.0 - mu);
    Ok(DerivedExponents {
        beta: beta_hamiltonian.min(beta_absorption),
        beta_hamiltonian,
        beta_absorption,
        nondegenerate: beta_absorption <= beta_hamiltonian,
    })
}
