//! Small dense square matrices stored as `Vec<Vec<f64>>`.
//!
//! Only what the loss corrections need: Gauss-Jordan inversion with partial
//! pivoting, products and the 1-norm condition number.

use crate::error::{Error, Result};

pub type Matrix = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Matrix {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    let inner = b.len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..inner {
            let aik = a[i][k];
            for j in 0..m {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Matrix) -> Matrix {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

/// Maximum absolute column sum.
pub fn norm1(a: &Matrix) -> f64 {
    let m = a.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| a.iter().map(|row| row[j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
///
/// Fails with [`Error::Singular`] when a pivot falls below `1e-14` times
/// the largest entry of the matrix.
pub fn invert(a: &Matrix) -> Result<Matrix> {
    let n = a.len();
    if n == 0 || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(
            "inverse needs a non-empty square matrix".into(),
        ));
    }
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut work: Matrix = a.clone();
    let mut inv = identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| work[x][col].abs().total_cmp(&work[y][col].abs()))
            .unwrap();
        if work[pivot][col].abs() <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        work.swap(col, pivot);
        inv.swap(col, pivot);
        let p = work[col][col];
        for j in 0..n {
            work[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work[r][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work[r][j] -= f * work[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    Ok(inv)
}

/// `‖A‖₁·‖A⁻¹‖₁`, infinite when `A` is singular.
pub fn condition_number(a: &Matrix) -> f64 {
    match invert(a) {
        Ok(inv) => norm1(a) * norm1(&inv),
        Err(_) => f64::INFINITY,
    }
}

/// Largest absolute entry of `a − I`.
pub fn identity_residual(a: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}
