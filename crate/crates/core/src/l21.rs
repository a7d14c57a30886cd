//! L2,1 norms and the reweighting diagonals that turn them into weighted
//! quadratic penalties.
//!
//! The sparse error `E` is penalized per sample (sum of column norms) and the
//! label predictor `P` per feature (sum of row norms).

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::ensure_finite;

/// Sum of the Euclidean norms of the columns of `m`.
pub fn l21_columns(m: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(m, "matrix")?;
    Ok(m.column_iter().map(|c| c.norm()).sum())
}

/// Sum of the Euclidean norms of the rows of `m`.
pub fn l21_rows(m: &DMatrix<f64>) -> Result<f64> {
    ensure_finite(m, "matrix")?;
    Ok(m.row_iter().map(|r| r.norm()).sum())
}

/// `1 / (2 max(|e_j|, eps_norm))` for every column `e_j` of `e`.
pub fn reweight_cols(e: &DMatrix<f64>, eps_norm: f64) -> DVector<f64> {
    DVector::from_iterator(
        e.ncols(),
        e.column_iter().map(|c| 0.5 / c.norm().max(eps_norm)),
    )
}

/// Row-wise counterpart of [`reweight_cols`].
pub fn reweight_rows(p: &DMatrix<f64>, eps_norm: f64) -> DVector<f64> {
    DVector::from_iterator(p.nrows(), p.row_iter().map(|r| 0.5 / r.norm().max(eps_norm)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn l21_columns_examples() {
        assert_eq!(l21_columns(&DMatrix::identity(2, 2)).unwrap(), 2.0);
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 0.0]);
        assert_eq!(l21_columns(&m).unwrap(), 5.0);
    }

    #[test]
    fn l21_rows_examples() {
        assert_eq!(l21_rows(&DMatrix::identity(2, 2)).unwrap(), 2.0);
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(l21_rows(&m).unwrap(), 5.0);
        let r = random_matrix(3, 5, 7);
        assert_eq!(l21_rows(&r).unwrap(), l21_columns(&r.transpose()).unwrap());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut m = DMatrix::zeros(2, 2);
        m[(1, 0)] = f64::INFINITY;
        assert!(l21_columns(&m).is_err());
        assert!(l21_rows(&m).is_err());
    }

    #[test]
    fn weighted_trace_identity() {
        // |M|_{2,1} = 2 tr(M diag(w) M^T) with w_j = 1 / (2 |m_j|)
        let m = random_matrix(3, 4, 11);
        let w = reweight_cols(&m, 1e-300);
        let weighted = &m * DMatrix::from_diagonal(&w) * m.transpose();
        let lhs = l21_columns(&m).unwrap();
        assert!((lhs - 2.0 * weighted.trace()).abs() <= 1e-10 * lhs);
    }

    #[test]
    fn reweight_cols_examples() {
        let z = DMatrix::zeros(3, 4);
        let w = reweight_cols(&z, 1e-8);
        assert!(w.iter().all(|&v| v == 1.0 / 2e-8));

        let m = DMatrix::from_row_slice(2, 1, &[0.3, 0.4]);
        assert!((reweight_cols(&m, 1e-8)[0] - 1.0).abs() < 1e-15);

        let e = random_matrix(4, 6, 3);
        let got = reweight_cols(&e, 1e-8);
        for j in 0..e.ncols() {
            let mut s = 0.0;
            for i in 0..e.nrows() {
                s += e[(i, j)] * e[(i, j)];
            }
            let want = 1.0 / (2.0 * s.sqrt().max(1e-8));
            assert!((got[j] - want).abs() <= 1e-14 * want);
        }
    }

    #[test]
    fn reweight_rows_examples() {
        let z = DMatrix::zeros(3, 2);
        assert!(reweight_rows(&z, 1e-8).iter().all(|&v| v == 1.0 / 2e-8));

        let m = DMatrix::from_row_slice(1, 2, &[2.0, 0.0]);
        assert_eq!(reweight_rows(&m, 1e-8)[0], 0.25);

        let p = random_matrix(5, 3, 4);
        let got = reweight_rows(&p, 1e-8);
        for i in 0..p.nrows() {
            let mut s = 0.0;
            for j in 0..p.ncols() {
                s += p[(i, j)] * p[(i, j)];
            }
            let want = 1.0 / (2.0 * s.sqrt().max(1e-8));
            assert!((got[i] - want).abs() <= 1e-14 * want);
        }
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c)
                .prop_map(move |v| DMatrix::from_vec(r, c, v))
        })
    }

    proptest! {
        #[test]
        fn l21_is_nonnegative_and_homogeneous(m in matrix_strategy(), t in -5.0f64..5.0) {
            let base = l21_columns(&m).unwrap();
            prop_assert!(base >= 0.0);
            let scaled = l21_columns(&(&m * t)).unwrap();
            prop_assert!((scaled - t.abs() * base).abs() <= 1e-12 * (1.0 + base * t.abs()));
            if m.iter().all(|&v| v == 0.0) {
                prop_assert_eq!(base, 0.0);
            } else {
                prop_assert!(base > 0.0);
            }
        }

        #[test]
        fn reweights_are_strictly_positive(m in matrix_strategy()) {
            prop_assert!(reweight_cols(&m, 1e-8).iter().all(|&v| v > 0.0 && v.is_finite()));
            prop_assert!(reweight_rows(&m, 1e-8).iter().all(|&v| v > 0.0 && v.is_finite()));
        }
    }
}
