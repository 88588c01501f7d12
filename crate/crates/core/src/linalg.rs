//! Minimal dense real linear algebra: row-major `f64` matrices, row norms,
//! Frobenius norm, and a deterministic power-iteration spectral norm.
//!
//! Everything is 64-bit and dependency-free; bound certification elsewhere
//! in the crate needs the headroom and the determinism more than it needs
//! BLAS-level speed.

use thiserror::Error;

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_REL_TOL: f64 = 1e-10;
/// Default iteration cap for [`spectral_norm`].
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("entry count {got} does not match {rows}x{cols}")]
    EntryCount { rows: usize, cols: usize, got: usize },
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("rows have unequal lengths: row {row} has {got}, expected {expected}")]
    RaggedRows { row: usize, expected: usize, got: usize },
    #[error(
        "power iteration did not converge within {iters} iterations \
         (last estimate {last_estimate})"
    )]
    NoConvergence { iters: usize, last_estimate: f64 },
    #[error("rel_tol must be positive, got {0}")]
    BadTolerance(f64),
}

/// Dense row-major matrix of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries, rejecting length mismatches
    /// and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::EntryCount { rows, cols, got: data.len() });
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite { row: i / cols.max(1), col: i % cols.max(1), value: v });
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(LinalgError::RaggedRows { row: i, expected: c, got: row.len() });
            }
        }
        Self::new(r, c, rows.concat())
    }

    /// Rank-one matrix `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in u {
            for &b in v {
                data.push(a * b);
            }
        }
        Self { rows: u.len(), cols: v.len(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * x` for a column vector `x`; panics on dimension mismatch
    /// (callers validate shapes at model-construction time).
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out[i] = acc;
        }
        out
    }

    /// `self^T * x`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "transpose_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        out
    }

    /// `self^T * other`; panics unless row counts agree.
    pub fn transpose_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_matmul dimension mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for j in 0..self.rows {
            let a = self.row(j);
            let b = other.row(j);
            for k1 in 0..self.cols {
                let ajk = a[k1];
                if ajk == 0.0 {
                    continue;
                }
                let row = &mut out.data[k1 * other.cols..(k1 + 1) * other.cols];
                for (o, bv) in row.iter_mut().zip(b) {
                    *o += ajk * bv;
                }
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        let mut m = self.clone();
        for v in &mut m.data {
            *v *= s;
        }
        m
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Euclidean norm of a slice.
pub fn vec_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Inner product of two equal-length slices.
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// 2-norms of the rows of `m`; empty matrix gives an empty vector.
pub fn row_norms(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| vec_norm(m.row(i))).collect()
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    vec_norm(m.entries())
}

/// Largest singular value via power iteration on the Gram matrix.
///
/// Deterministic starting rule: one pass from the normalized all-ones
/// vector, then one pass restarted from a fixed seeded pseudo-random
/// vector (the first pass alone can stall on a non-dominant eigenvector
/// when the start is orthogonal to the dominant one); the larger Rayleigh
/// limit wins. Fails with the last estimate if neither pass settles to
/// `rel_tol` within `max_iters`.
pub fn spectral_norm(m: &Matrix, rel_tol: f64, max_iters: usize) -> Result<f64, LinalgError> {
    if rel_tol <= 0.0 || !rel_tol.is_finite() {
        return Err(LinalgError::BadTolerance(rel_tol));
    }
    if m.rows() == 0 || m.cols() == 0 || m.is_zero() {
        return Ok(0.0);
    }

    // Iterate on the smaller of M^T M and M M^T.
    let transpose_gram = m.rows() < m.cols();
    let dim = m.rows().min(m.cols());
    let gram_apply = |x: &[f64]| -> Vec<f64> {
        if transpose_gram {
            // M M^T x
            m.matvec(&m.transpose_matvec(x))
        } else {
            // M^T M x
            m.transpose_matvec(&m.matvec(x))
        }
    };

    let ones = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut pseudo = Vec::with_capacity(dim);
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for _ in 0..dim {
        // splitmix64, mapped into (-1, 1)
        state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        pseudo.push((z as f64 / u64::MAX as f64) * 2.0 - 1.0);
    }
    let pn = vec_norm(&pseudo);
    for v in &mut pseudo {
        *v /= pn;
    }

    let mut best: f64 = 0.0;
    for start in [ones, pseudo] {
        match power_pass(&gram_apply, start, rel_tol, max_iters) {
            Ok(lambda) => best = best.max(lambda.max(0.0).sqrt()),
            Err(last_lambda) => {
                // A single failed pass means rel_tol cannot be certified;
                // surface the best estimate seen so far.
                let last_estimate = best.max(last_lambda.max(0.0).sqrt());
                return Err(LinalgError::NoConvergence { iters: max_iters, last_estimate });
            }
        }
    }
    Ok(best)
}

/// [`spectral_norm`] with the crate defaults.
pub fn spectral_norm_default(m: &Matrix) -> Result<f64, LinalgError> {
    spectral_norm(m, SPECTRAL_REL_TOL, SPECTRAL_MAX_ITERS)
}

/// One power-iteration pass; `Ok` on convergence, `Err` carrying the last
/// Rayleigh quotient otherwise.
fn power_pass(
    gram_apply: &dyn Fn(&[f64]) -> Vec<f64>,
    mut x: Vec<f64>,
    rel_tol: f64,
    max_iters: usize,
) -> Result<f64, f64> {
    let mut lambda_old = f64::NAN;
    for _ in 0..max_iters {
        let y = gram_apply(&x);
        let lambda = dot(&y, &x); // Rayleigh quotient; x is unit length
        let ynorm = vec_norm(&y);
        if ynorm == 0.0 {
            // x is in the null space of the Gram matrix.
            return Ok(0.0);
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ynorm;
        }
        if lambda_old.is_finite()
            && (lambda - lambda_old).abs() <= rel_tol * lambda.abs().max(f64::MIN_POSITIVE)
        {
            return Ok(lambda);
        }
        lambda_old = lambda;
    }
    Err(if lambda_old.is_finite() { lambda_old } else { 0.0 })
}
