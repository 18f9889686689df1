//! Dense square matrices and an LU solver with partial pivoting.
//!
//! Every system in this crate is at most (states * actions)^2 = 256 x 256,
//! so a plain O(n^3) factorization, computed once per (policy, lambda) pair
//! and reused across iterations, is all that is needed.

use crate::error::{GrapeError, Result};

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub(crate) struct Mat {
    n: usize,
    a: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Mat { n, a: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.a[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for (m, v) in row.iter().zip(x.iter()) {
                acc += m * v;
            }
            out[i] = acc;
        }
        out
    }
}

/// LU factorization (Doolittle, partial pivoting) of a square matrix.
#[derive(Debug, Clone)]
pub(crate) struct Lu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

pub(crate) fn lu_factor(m: &Mat) -> Result<Lu> {
    let n = m.n;
    let mut lu = m.a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // Pivot search.
        let mut p = col;
        let mut best = lu[col * n + col].abs();
        for row in col + 1..n {
            let v = lu[row * n + col].abs();
            if v > best {
                best = v;
                p = row;
            }
        }
        if best < 1e-13 {
            return Err(GrapeError::SolveFailed(format!(
                "matrix singular to working precision at column {col}"
            )));
        }
        if p != col {
            piv.swap(col, p);
            for j in 0..n {
                lu.swap(col * n + j, p * n + j);
            }
        }
        let pivot = lu[col * n + col];
        for row in col + 1..n {
            let f = lu[row * n + col] / pivot;
            lu[row * n + col] = f;
            if f != 0.0 {
                for j in col + 1..n {
                    lu[row * n + j] -= f * lu[col * n + j];
                }
            }
        }
    }
    Ok(Lu { n, lu, piv })
}

impl Lu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x: Vec<f64> = self.piv.iter().map(|&i| b[i]).collect();
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        // Backward substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        x
    }
}
