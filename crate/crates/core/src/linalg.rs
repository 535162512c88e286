//! Dense linear algebra helpers over `faer` matrices.
//!
//! The crate is built without faer's rayon feature, so every factorization
//! runs sequentially and is bitwise reproducible for identical inputs.

use faer::Mat;

use crate::error::{Error, Result};

pub type Matrix = Mat<f64>;

/// Thin SVD factors `(U, sigma, V)` with `M = U diag(sigma) V^T` and sigma
/// sorted in non-increasing order.
pub struct SvdParts {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

pub fn svd(m: &Matrix) -> Result<SvdParts> {
    let svd = m.thin_svd().map_err(|_| Error::SvdFailed)?;
    let s = svd.S().column_vector();
    let sigma = (0..s.nrows()).map(|i| s[i]).collect();
    Ok(SvdParts {
        u: svd.U().to_owned(),
        sigma,
        v: svd.V().to_owned(),
    })
}

pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let mut s = m.singular_values().map_err(|_| Error::SvdFailed)?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Rebuilds `U[:, ..k] diag(weights) V[:, ..k]^T` for `k = weights.len()`.
pub fn reconstruct(u: &Matrix, weights: &[f64], v: &Matrix) -> Matrix {
    let k = weights.len();
    if k == 0 {
        return Matrix::zeros(u.nrows(), v.nrows());
    }
    let scaled = Matrix::from_fn(u.nrows(), k, |i, c| u[(i, c)] * weights[c]);
    let vk = v.get(.., ..k);
    &scaled * vk.transpose()
}

pub fn frobenius_sq(m: &Matrix) -> f64 {
    let mut acc = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            acc += m[(i, j)] * m[(i, j)];
        }
    }
    acc
}

pub fn frobenius_dist_sq(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let diff = a[(i, j)] - b[(i, j)];
            acc += diff * diff;
        }
    }
    acc
}

/// FNV-1a over the bit patterns of the entries in column-major order.
pub fn content_hash(m: &Matrix) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(m.nrows() as u64);
    feed(m.ncols() as u64);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            feed(m[(i, j)].to_bits());
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_reconstructs_input() {
        let m = Matrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let parts = svd(&m).unwrap();
        let back = reconstruct(&parts.u, &parts.sigma, &parts.v);
        assert!(frobenius_dist_sq(&m, &back) < 1e-20);
        assert!(parts.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn nuclear_norm_of_diagonal() {
        let m = Matrix::from_fn(3, 3, |i, j| if i == j { -(i as f64) - 1.0 } else { 0.0 });
        assert!((nuclear_norm(&m).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn hash_distinguishes_entries() {
        let a = Matrix::zeros(3, 3);
        let mut b = Matrix::zeros(3, 3);
        assert_eq!(content_hash(&a), content_hash(&b));
        b[(1, 2)] = 1e-300;
        assert_ne!(content_hash(&a), content_hash(&b));
    }
}
