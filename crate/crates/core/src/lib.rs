//! Numerical laboratory for dead cores of degenerate and singular fully
//! nonlinear elliptic equations
//!
//! ```text
//! |Du|^p F(D^2 u) + a(x) |Du|^q = lambda0(x) u_+^mu   in Omega,   u = g on the boundary,
//! ```
//!
//! with closed-form oracles for growth, non-degeneracy, barriers and the
//! geometry of the free boundary.

pub mod analytic;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod model;
pub mod rates;
pub mod solver;
mod stats;

pub use error::{Error, Result};
