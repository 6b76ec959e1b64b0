//! Small dense symmetric linear algebra used for optima and smoothness
//! constants. Dimensions here are at most a few hundred.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major symmetric `d × d` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    d: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(d: usize) -> Self {
        Self { d, data: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.data[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *v;
        }
        m
    }

    /// Builds from row-major data, symmetrising `(A + Aᵀ)/2`.
    pub fn from_row_major(d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::Dimension { expected: d * d, got: data.len() });
        }
        let mut m = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.data[i * d + j] = 0.5 * (data[i * d + j] + data[j * d + i]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self += c * x xᵀ`
    pub fn rank_one_update(&mut self, c: f64, x: &[f64]) {
        let d = self.d;
        for i in 0..d {
            let cx = c * x[i];
            if cx == 0.0 {
                continue;
            }
            let row = &mut self.data[i * d..(i + 1) * d];
            for (r, xj) in row.iter_mut().zip(x) {
                *r += cx * xj;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn add_scaled(&mut self, c: f64, other: &SymMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d).map(|i| self.data[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Lower Cholesky factor, `None` when the matrix is not numerically
    /// positive definite.
    pub fn cholesky(&self) -> Option<Cholesky> {
        let d = self.d;
        let mut l = vec![0.0; d * d];
        let scale = (0..d).map(|i| self.get(i, i).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for j in 0..d {
            let mut diag = self.get(j, j);
            for k in 0..j {
                diag -= l[j * d + k] * l[j * d + k];
            }
            if diag <= 1e-13 * scale {
                return None;
            }
            let ljj = diag.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
        }
        Some(Cholesky { d, l })
    }

    /// Largest eigenvalue by power iteration, to `rel_tol` on successive
    /// Rayleigh quotients. The matrix must be positive semi-definite.
    pub fn largest_eigenvalue(&self, rel_tol: f64) -> f64 {
        power_iteration(self.d, |x| self.mul_vec(x), rel_tol)
    }

    /// Smallest eigenvalue by inverse power iteration; zero when the matrix
    /// is singular.
    pub fn smallest_eigenvalue(&self, rel_tol: f64) -> f64 {
        match self.cholesky() {
            None => 0.0,
            Some(ch) => {
                let inv_largest = power_iteration(self.d, |x| ch.solve(x), rel_tol);
                if inv_largest > 0.0 {
                    1.0 / inv_largest
                } else {
                    0.0
                }
            }
        }
    }
}

/// Power iteration for a symmetric positive semi-definite operator.
fn power_iteration(d: usize, apply: impl Fn(&[f64]) -> Vec<f64>, rel_tol: f64) -> f64 {
    if d == 0 {
        return 0.0;
    }
    // Deterministic start with every coordinate present, so no eigenvector
    // of a generic matrix is orthogonal to it.
    let mut x: Vec<f64> = (0..d).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3).collect();
    normalise(&mut x);
    let mut lambda = 0.0;
    for _ in 0..1_000_000 {
        let y = apply(&x);
        let rayleigh: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / norm).collect();
        if (rayleigh - lambda).abs() <= rel_tol * rayleigh.abs() {
            // One more step so the Rayleigh quotient is measured on the
            // refined vector.
            let y = apply(&x);
            return y.iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        lambda = rayleigh;
    }
    lambda
}

fn normalise(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in x {
        *v /= n;
    }
}

#[derive(Debug, Clone)]
pub struct Cholesky {
    d: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut y = b.to_vec();
        for i in 0..d {
            let s = y[i] - (0..i).map(|k| self.l[i * d + k] * y[k]).sum::<f64>();
            y[i] = s / self.l[i * d + i];
        }
        for i in (0..d).rev() {
            let s = y[i] - ((i + 1)..d).map(|k| self.l[k * d + i] * y[k]).sum::<f64>();
            y[i] = s / self.l[i * d + i];
        }
        y
    }

    /// Row-major lower factor.
    pub fn lower(&self) -> &[f64] {
        &self.l
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_extremes() {
        let m = SymMatrix::from_diag(&[1.0, 4.0]);
        assert_relative_eq!(m.largest_eigenvalue(1e-12), 4.0, max_relative = 1e-10);
        assert_relative_eq!(m.smallest_eigenvalue(1e-12), 1.0, max_relative = 1e-10);
        let id = SymMatrix::identity(3);
        assert_relative_eq!(id.largest_eigenvalue(1e-12), 1.0, max_relative = 1e-12);
        assert_relative_eq!(id.smallest_eigenvalue(1e-12), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cholesky_solves() {
        let m = SymMatrix::from_row_major(2, &[4.0, 1.0, 1.0, 3.0]).unwrap();
        let x = m.cholesky().unwrap().solve(&[1.0, 2.0]);
        let back = m.mul_vec(&x);
        assert_relative_eq!(back[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(back[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn singular_has_no_cholesky() {
        let m = SymMatrix::from_row_major(2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(m.cholesky().is_none());
        assert_eq!(m.smallest_eigenvalue(1e-10), 0.0);
    }
}
