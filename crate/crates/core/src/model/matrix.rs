use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance for matrices entering the operator menu.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric matrix of size 1, 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymMatrix {
    n: usize,
    a: [[f64; 3]; 3],
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!((1..=3).contains(&n), "matrix size {n}");
        Self { n, a: [[0.0; 3]; 3] }
    }

    pub fn identity(n: usize) -> Self {
        Self::diag(&vec![1.0; n])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.a[i][i] = *v;
        }
        m
    }

    /// 2x2 matrix from its three independent entries.
    pub fn sym2(a11: f64, a12: f64, a22: f64) -> Self {
        let mut m = Self::zeros(2);
        m.a[0][0] = a11;
        m.a[0][1] = a12;
        m.a[1][0] = a12;
        m.a[1][1] = a22;
        m
    }

    /// Builds a matrix from rows, rejecting asymmetry above [`SYMMETRY_TOL`].
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if !(1..=3).contains(&n) {
            return Err(Error::MatrixSize(n));
        }
        let mut m = Self::zeros(n);
        let mut deviation: f64 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MatrixSize(row.len()));
            }
            for (j, v) in row.iter().enumerate() {
                m.a[i][j] = *v;
            }
        }
        for i in 0..n {
            for j in 0..i {
                deviation = deviation.max((m.a[i][j] - m.a[j][i]).abs());
                let avg = 0.5 * (m.a[i][j] + m.a[j][i]);
                m.a[i][j] = avg;
                m.a[j][i] = avg;
            }
        }
        if deviation > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                deviation,
                tolerance: SYMMETRY_TOL,
            });
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.a[i][..self.n].to_vec()).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.a[i][i]).sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = *self;
        for row in m.a.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        m
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.a[i][j] += other.a[i][j];
            }
        }
        m
    }

    /// Frobenius inner product `tr(A M)`.
    pub fn weighted_trace(&self, weight: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                s += weight.a[i][j] * self.a[j][i];
            }
        }
        s
    }

    /// Eigenvalues in ascending order; the first `dim()` entries are meaningful.
    pub fn eigenvalues(&self) -> [f64; 3] {
        match self.n {
            1 => [self.a[0][0], 0.0, 0.0],
            2 => {
                let (lo, hi) = eig2(self.a[0][0], self.a[0][1], self.a[1][1]);
                [lo, hi, 0.0]
            }
            _ => {
                let m = nalgebra::Matrix3::from_fn(|i, j| self.a[i][j]);
                let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
                e.sort_by(|x, y| x.total_cmp(y));
                [e[0], e[1], e[2]]
            }
        }
    }

    pub fn eigenvalue_list(&self) -> Vec<f64> {
        self.eigenvalues()[..self.n].to_vec()
    }
}

/// Eigenvalues `(min, max)` of the symmetric matrix `[[a, b], [b, c]]`.
#[inline]
pub fn eig2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + c);
    let half = 0.5 * (a - c);
    let rad = half.hypot(b);
    (mean - rad, mean + rad)
}

impl Serialize for SymMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
