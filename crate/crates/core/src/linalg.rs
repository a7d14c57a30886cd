//! Small dense helpers shared by the solvers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn ensure_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

pub fn ensure_nonnegative(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().any(|&v| v < 0.0) {
        Err(Error::NegativeEntries { what })
    } else {
        Ok(())
    }
}

pub fn ensure_shape(
    m: &DMatrix<f64>,
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected: format!("{rows}x{cols}"),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        })
    }
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_symmetric(m: &DMatrix<f64>, tol: f64, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape {
            what,
            expected: "square".into(),
            got: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    let max_dev = asymmetry(m);
    if max_dev > tol {
        Err(Error::Asymmetric { what, max_dev })
    } else {
        Ok(())
    }
}

/// Squared Frobenius norm.
pub fn frob2(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// One multiplicative step `x * num / den`, entrywise.
///
/// `num` and `den` are the negative and positive halves of the gradient
/// (`grad = 2 (den - num)`). Either may carry negative entries when the data
/// or a coupling matrix is mixed-sign; those parts are moved across so that
/// both sides stay nonnegative while their difference is unchanged. With
/// nonnegative inputs this is exactly `x * num / max(den, eps)`.
///
/// Results below the smallest normal `f64` are flushed to zero; subnormal
/// entries otherwise accumulate in long runs and slow every product.
pub fn multiplicative_step(
    x: &DMatrix<f64>,
    num: &DMatrix<f64>,
    den: &DMatrix<f64>,
    eps: f64,
) -> DMatrix<f64> {
    debug_assert_eq!(x.shape(), num.shape());
    debug_assert_eq!(x.shape(), den.shape());
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        let (n, d) = (num[(i, j)], den[(i, j)]);
        let top = n.max(0.0) + (-d).max(0.0);
        let bottom = d.max(0.0) + (-n).max(0.0);
        let v = x[(i, j)] * top / bottom.max(eps);
        if v < f64::MIN_POSITIVE {
            0.0
        } else {
            v
        }
    })
}

/// Returns true when every entry of `num` and `den` is nonnegative, i.e. the
/// plain multiplicative rule applies without sign splitting.
pub fn sign_regular(num: &DMatrix<f64>, den: &DMatrix<f64>) -> bool {
    num.iter().chain(den.iter()).all(|&v| v >= 0.0)
}

/// Squared Euclidean distances between all pairs of columns.
pub fn pairwise_sq_dists(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let norms: Vec<f64> = (0..n).map(|j| x.column(j).norm_squared()).collect();
    let gram = x.transpose() * x;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0)
        }
    })
}

pub fn column_norms(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols()).map(|j| x.column(j).norm()).collect()
}
