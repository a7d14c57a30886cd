//! NMF, concept factorization (CF), locally consistent CF (LCCF) and
//! constrained CF (CCF) with their multiplicative updates.
//!
//! Every fit draws its factors uniformly on (0, 1) from a ChaCha8 generator
//! seeded with `seed`: the first factor (`U` for NMF, `W` for the CF family)
//! is drawn column-major first, then the second. Each iteration updates the
//! coefficient factor (`V` or `Z`) before `W`, matching the order the
//! semi-supervised solver uses. NMF updates `U` then `V`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graphs::{knn_adjacency, WeightMatrix};
use crate::linalg::{
    column_norms, ensure_finite, ensure_nonnegative, ensure_shape, ensure_symmetric, frob2,
    multiplicative_step,
};
use crate::{random_factor, seeded_rng};

/// Denominator floor used by every baseline update.
pub const EPS_DIV: f64 = 1e-12;

/// Kernels may be asymmetric up to this absolute deviation.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    /// Basis, `D x r`.
    pub u: DMatrix<f64>,
    /// Coefficients, `N x r`.
    pub v: DMatrix<f64>,
    /// `|X - U V^T|_F^2` after each iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfFactors {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcfFactors {
    pub w: DMatrix<f64>,
    pub z: DMatrix<f64>,
    /// The fixed constraint matrix the fit used.
    pub a: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
}

impl CcfFactors {
    /// The learned representation `A Z`, one row per sample.
    pub fn representation(&self) -> DMatrix<f64> {
        &self.a * &self.z
    }
}

fn check_rank(rank: usize) -> Result<()> {
    if rank == 0 {
        Err(Error::InvalidParam("rank must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn check_kernel(k: &DMatrix<f64>) -> Result<()> {
    ensure_finite(k, "kernel")?;
    ensure_symmetric(k, SYMMETRY_TOL, "kernel")
}

pub fn nmf_objective(x: &DMatrix<f64>, u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    frob2(&(x - u * v.transpose()))
}

/// Classic Lee-Seung NMF, `X ~ U V^T`. Requires nonnegative data.
pub fn nmf_fit(x: &DMatrix<f64>, rank: usize, iters: usize, seed: u64) -> Result<NmfFactors> {
    check_rank(rank)?;
    ensure_finite(x, "data matrix")?;
    ensure_nonnegative(x, "data matrix")?;
    let (d, n) = x.shape();
    let mut rng = seeded_rng(seed);
    let mut u = random_factor(&mut rng, d, rank);
    let mut v = random_factor(&mut rng, n, rank);
    let mut objective_trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let vtv = v.transpose() * &v;
        u = multiplicative_step(&u, &(x * &v), &(&u * vtv), EPS_DIV);
        let utu = u.transpose() * &u;
        v = multiplicative_step(&v, &(x.transpose() * &u), &(&v * utu), EPS_DIV);
        objective_trace.push(nmf_objective(x, &u, &v));
    }
    Ok(NmfFactors {
        u,
        v,
        objective_trace,
    })
}

/// `|X - X W V^T|_F^2` evaluated from the kernel `K = X^T X`.
pub fn cf_objective(k: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let kw = k * w;
    let cross = (w.transpose() * k * v).trace();
    let quad = ((w.transpose() * kw) * (v.transpose() * v)).trace();
    (k.trace() - 2.0 * cross + quad).max(0.0)
}

/// Plain concept factorization on a precomputed kernel.
pub fn cf_fit(k: &DMatrix<f64>, rank: usize, iters: usize, seed: u64) -> Result<CfFactors> {
    lccf_core(k, None, 0.0, rank, iters, seed)
}

/// LCCF graph: cosine similarity on the symmetrized Euclidean kNN graph,
/// clamped at zero, zero diagonal. Ties at the k-th distance are included.
pub fn lccf_weights(x: &DMatrix<f64>, k_neighbors: usize) -> Result<WeightMatrix> {
    ensure_finite(x, "data matrix")?;
    let n = x.ncols();
    if k_neighbors == 0 || k_neighbors >= n {
        return Err(Error::InvalidParam(format!(
            "neighbor count must satisfy 1 <= k < N, got k={k_neighbors}, N={n}"
        )));
    }
    let norms = column_norms(x);
    if let Some(index) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNormColumn { index });
    }
    let adj = knn_adjacency(x, k_neighbors);
    let gram = x.transpose() * x;
    let s = DMatrix::from_fn(n, n, |i, j| {
        if i == j || !adj[i][j] {
            0.0
        } else {
            (gram[(i, j)] / (norms[i] * norms[j])).clamp(0.0, 1.0)
        }
    });
    WeightMatrix::new(s)
}

/// CF objective plus `lambda tr(V^T L V)`.
pub fn lccf_objective(
    k: &DMatrix<f64>,
    s: &WeightMatrix,
    lambda: f64,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> f64 {
    let sm = s.matrix();
    let degrees: Vec<f64> = (0..sm.nrows()).map(|i| sm.row(i).sum()).collect();
    let mut smooth = 0.0;
    for c in 0..v.ncols() {
        let col = v.column(c);
        let dv: f64 = degrees.iter().zip(col.iter()).map(|(d, x)| d * x * x).sum();
        smooth += dv - (col.transpose() * sm * col)[(0, 0)];
    }
    cf_objective(k, w, v) + lambda * smooth
}

/// Graph-regularized concept factorization.
pub fn lccf_fit(
    k: &DMatrix<f64>,
    s: &WeightMatrix,
    lambda: f64,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<CfFactors> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    ensure_shape(s.matrix(), k.nrows(), k.ncols(), "weight matrix")?;
    ensure_symmetric(s.matrix(), SYMMETRY_TOL, "weight matrix")?;
    lccf_core(k, Some(s), lambda, rank, iters, seed)
}

fn lccf_core(
    k: &DMatrix<f64>,
    s: Option<&WeightMatrix>,
    lambda: f64,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<CfFactors> {
    check_rank(rank)?;
    check_kernel(k)?;
    let n = k.nrows();
    let mut rng = seeded_rng(seed);
    let mut w = random_factor(&mut rng, n, rank);
    let mut v = random_factor(&mut rng, n, rank);

    let mut objective_trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        (w, v) = match s {
            Some(s) => lccf_update(k, s, lambda, &w, &v),
            None => cf_update(k, &w, &v),
        };
        objective_trace.push(match s {
            Some(s) => lccf_objective(k, s, lambda, &w, &v),
            None => cf_objective(k, &w, &v),
        });
    }
    Ok(CfFactors {
        w,
        v,
        objective_trace,
    })
}

/// One CF iteration: `V` then `W`.
pub fn cf_update(k: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let kw = k * w;
    let wkw = w.transpose() * &kw;
    let v = multiplicative_step(v, &kw, &(v * wkw), EPS_DIV);
    let w = update_basis(k, w, &v);
    (w, v)
}

/// One LCCF iteration: `V` (with the graph terms) then `W`.
pub fn lccf_update(
    k: &DMatrix<f64>,
    s: &WeightMatrix,
    lambda: f64,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let sm = s.matrix();
    let kw = k * w;
    let wkw = w.transpose() * &kw;
    let num = kw + (sm * v) * lambda;
    let dv = DMatrix::from_fn(v.nrows(), v.ncols(), |i, c| sm.row(i).sum() * v[(i, c)]);
    let den = v * wkw + dv * lambda;
    let v = multiplicative_step(v, &num, &den, EPS_DIV);
    let w = update_basis(k, w, &v);
    (w, v)
}

/// `W <- W (K V) / (K W V^T V)`, shared by the CF family.
fn update_basis(k: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let kv = k * v;
    let vtv = v.transpose() * v;
    let den = (k * w) * vtv;
    multiplicative_step(w, &kv, &den, EPS_DIV)
}

/// One CCF iteration: `Z` then `W`.
pub fn ccf_update(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let kw = k * w;
    let wkw = w.transpose() * &kw;
    let num = a.transpose() * kw;
    let den = (a.transpose() * a * z) * wkw;
    let z = multiplicative_step(z, &num, &den, EPS_DIV);
    let w = update_basis(k, w, &(a * &z));
    (w, z)
}

/// `[A_L 0; 0 I_u]`, shape `(l+u) x (c+u)`.
pub fn ccf_constraint(a_l: &DMatrix<f64>, num_unlabeled: usize) -> DMatrix<f64> {
    let (l, c) = a_l.shape();
    let u = num_unlabeled;
    let mut a = DMatrix::zeros(l + u, c + u);
    a.view_mut((0, 0), (l, c)).copy_from(a_l);
    a.view_mut((l, c), (u, u)).fill_with_identity();
    a
}

/// `|X - X W Z^T A^T|_F^2` from the kernel.
pub fn ccf_objective(k: &DMatrix<f64>, a: &DMatrix<f64>, w: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    cf_objective(k, w, &(a * z))
}

/// Constrained concept factorization with a fixed constraint matrix `a`.
///
/// `a` must have one row per sample, be nonnegative and finite, and have no
/// all-zero row. The classic construction is [`ccf_constraint`]; any other
/// nonnegative block indicator (for instance a learned one) is accepted.
pub fn ccf_fit(
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<CcfFactors> {
    check_rank(rank)?;
    check_kernel(k)?;
    let n = k.nrows();
    if a.nrows() != n || a.ncols() == 0 {
        return Err(Error::Shape {
            what: "constraint matrix",
            expected: format!("{n} x m"),
            got: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    ensure_finite(a, "constraint matrix")?;
    ensure_nonnegative(a, "constraint matrix")?;
    if let Some(row) = (0..n).find(|&i| a.row(i).iter().all(|&v| v == 0.0)) {
        return Err(Error::InvalidParam(format!(
            "constraint matrix row {row} is all zero"
        )));
    }

    let mut rng = seeded_rng(seed);
    let mut w = random_factor(&mut rng, n, rank);
    let mut z = random_factor(&mut rng, a.ncols(), rank);
    let mut objective_trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        (w, z) = ccf_update(k, a, &w, &z);
        objective_trace.push(ccf_objective(k, a, &w, &z));
    }
    Ok(CcfFactors {
        w,
        z,
        a: a.clone(),
        objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::nearest_neighbors;
    use crate::linalg::pairwise_sq_dists;
    use rand::Rng;

    fn random_nonneg(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded_rng(seed);
        DMatrix::from_fn(d, n, |_, _| rng.gen_range(0.0..1.0))
    }

    fn assert_monotone(trace: &[f64], slack: f64) {
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + slack, "objective rose from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn nmf_exact_product_is_a_fixed_point() {
        let seed = 3;
        let mut rng = seeded_rng(seed);
        let u = random_factor(&mut rng, 4, 2);
        let v = random_factor(&mut rng, 6, 2);
        let x = &u * v.transpose();
        let fit = nmf_fit(&x, 2, 5, seed).unwrap();
        assert!((&fit.u - &u).amax() < 1e-12);
        assert!((&fit.v - &v).amax() < 1e-12);
    }

    #[test]
    fn nmf_overcomplete_fit_is_tight() {
        let x = random_nonneg(6, 8, 4);
        let fit = nmf_fit(&x, 8, 3000, 1).unwrap();
        let rel = nmf_objective(&x, &fit.u, &fit.v) / frob2(&x);
        assert!(rel <= 1e-2, "relative error {rel}");
    }

    #[test]
    fn nmf_objective_is_monotone() {
        let x = random_nonneg(10, 20, 5);
        let fit = nmf_fit(&x, 3, 200, 2).unwrap();
        assert_monotone(&fit.objective_trace, 1e-10);
    }

    #[test]
    fn nmf_rejects_negative_data() {
        let mut x = random_nonneg(3, 3, 1);
        x[(0, 0)] = -0.1;
        assert!(matches!(nmf_fit(&x, 2, 1, 0), Err(Error::NegativeEntries { .. })));
    }

    #[test]
    fn cf_fixed_point_when_ratios_are_one() {
        // W = V = I makes K V = K W V^T V and K W = V W^T K W for any K
        let x = random_nonneg(3, 4, 2);
        let k = x.transpose() * &x;
        let eye = DMatrix::<f64>::identity(4, 4);
        let (w, v) = cf_update(&k, &eye, &eye);
        assert!((&w - &eye).amax() < 1e-12);
        assert!((&v - &eye).amax() < 1e-12);
    }

    #[test]
    fn cf_on_identity_data_reconstructs() {
        let n = 4;
        let k = DMatrix::<f64>::identity(n, n);
        let fit = cf_fit(&k, n, 5000, 7).unwrap();
        let err = cf_objective(&k, &fit.w, &fit.v);
        assert!(err < 1e-3, "residual {err}");
        assert_monotone(&fit.objective_trace, 1e-10);
    }

    #[test]
    fn cf_monotone_on_random_psd_kernel() {
        let x = random_nonneg(8, 15, 6);
        let k = x.transpose() * &x;
        let fit = cf_fit(&k, 3, 300, 3).unwrap();
        assert_monotone(&fit.objective_trace, 1e-10);
        assert!(fit.w.iter().chain(fit.v.iter()).all(|&v| v >= 0.0));
    }

    #[test]
    fn cf_rejects_asymmetric_kernel() {
        let mut k = DMatrix::<f64>::identity(3, 3);
        k[(0, 1)] = 1e-6;
        assert!(matches!(cf_fit(&k, 2, 1, 0), Err(Error::Asymmetric { .. })));
    }

    #[test]
    fn lccf_weights_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 5.0]);
        let s = lccf_weights(&x, 1).unwrap().into_inner();
        assert!((s[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(s[(0, 1)], s[(1, 0)]);

        let orth = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = lccf_weights(&orth, 1).unwrap().into_inner();
        assert_eq!(s[(0, 1)], 0.0);

        let zero_col = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            lccf_weights(&zero_col, 1),
            Err(Error::ZeroNormColumn { .. })
        ));
    }

    #[test]
    fn lccf_weights_match_brute_force_neighbors() {
        let x = random_nonneg(3, 5, 8);
        let k = 2;
        let s = lccf_weights(&x, k).unwrap().into_inner();
        let n = 5;
        let dist = |i: usize, j: usize| -> f64 {
            (0..3).map(|r| (x[(r, i)] - x[(r, j)]).powi(2)).sum()
        };
        let cos = |i: usize, j: usize| -> f64 {
            let dot: f64 = (0..3).map(|r| x[(r, i)] * x[(r, j)]).sum();
            dot / ((0..3).map(|r| x[(r, i)].powi(2)).sum::<f64>().sqrt()
                * (0..3).map(|r| x[(r, j)].powi(2)).sum::<f64>().sqrt())
        };
        // j is in N_k(i) iff fewer than k other samples are strictly closer
        let in_knn = |i: usize, j: usize| -> bool {
            let dij = dist(i, j);
            (0..n).filter(|&m| m != i && dist(i, m) < dij).count() < k
        };
        for i in 0..n {
            for j in 0..n {
                let want = if i != j && (in_knn(i, j) || in_knn(j, i)) {
                    cos(i, j).max(0.0)
                } else {
                    0.0
                };
                assert!((s[(i, j)] - want).abs() < 1e-12, "({i},{j})");
            }
        }
        let _ = nearest_neighbors(&pairwise_sq_dists(&x), k, true);
    }

    #[test]
    fn lccf_without_regularization_is_cf() {
        let x = random_nonneg(6, 12, 9);
        let k = x.transpose() * &x;
        let s = lccf_weights(&x, 3).unwrap();
        let zero = WeightMatrix::new(DMatrix::zeros(12, 12)).unwrap();
        for iters in [1, 5, 20] {
            let cf = cf_fit(&k, 3, iters, 4).unwrap();
            for (weights, lambda) in [(&s, 0.0), (&zero, 10.0)] {
                let lc = lccf_fit(&k, weights, lambda, 3, iters, 4).unwrap();
                assert!((&lc.w - &cf.w).amax() <= 1e-12);
                assert!((&lc.v - &cf.v).amax() <= 1e-12);
            }
        }
    }

    #[test]
    fn lccf_regularized_objective_is_monotone() {
        let x = random_nonneg(6, 20, 10);
        let k = x.transpose() * &x;
        let s = lccf_weights(&x, 4).unwrap();
        let fit = lccf_fit(&k, &s, 5.0, 3, 300, 1).unwrap();
        assert_monotone(&fit.objective_trace, 1e-10);
    }

    #[test]
    fn ccf_with_identity_constraint_is_cf() {
        let x = random_nonneg(5, 10, 11);
        let k = x.transpose() * &x;
        let a = ccf_constraint(&DMatrix::zeros(0, 2), 10);
        let mut expected = DMatrix::zeros(10, 12);
        expected.view_mut((0, 2), (10, 10)).fill_with_identity();
        assert_eq!(a, expected);
        let a = DMatrix::<f64>::identity(10, 10);
        for iters in [1, 4, 25] {
            let cf = cf_fit(&k, 3, iters, 5).unwrap();
            let ccf = ccf_fit(&k, &a, 3, iters, 5).unwrap();
            assert!((&ccf.w - &cf.w).amax() <= 1e-12);
            assert!((&ccf.z - &cf.v).amax() <= 1e-12);
        }
    }

    #[test]
    fn ccf_constraint_layout() {
        let a_l = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let a = ccf_constraint(&a_l, 2);
        assert_eq!(a.shape(), (5, 4));
        assert_eq!(a.view((0, 0), (3, 2)), a_l.view((0, 0), (3, 2)));
        assert_eq!(a[(3, 2)], 1.0);
        assert_eq!(a[(4, 3)], 1.0);
        assert_eq!(a[(3, 3)], 0.0);
        assert_eq!(a[(0, 2)], 0.0);
    }

    #[test]
    fn ccf_monotone_on_labeled_data() {
        let x = random_nonneg(6, 14, 12);
        let k = x.transpose() * &x;
        let a_l = DMatrix::from_fn(6, 2, |i, c| if i % 2 == c { 1.0 } else { 0.0 });
        let a = ccf_constraint(&a_l, 8);
        let fit = ccf_fit(&k, &a, 3, 300, 6).unwrap();
        assert_monotone(&fit.objective_trace, 1e-10);
        assert_eq!(fit.representation().shape(), (14, 3));
    }

    #[test]
    fn ccf_fixed_point_when_numerator_equals_denominator() {
        let x = random_nonneg(3, 5, 3);
        let k = x.transpose() * &x;
        let eye = DMatrix::<f64>::identity(5, 5);
        let (w, z) = ccf_update(&k, &eye, &eye, &eye);
        assert!((&w - &eye).amax() < 1e-12);
        assert!((&z - &eye).amax() < 1e-12);
    }

    #[test]
    fn ccf_rejects_malformed_constraint() {
        let k = DMatrix::<f64>::identity(3, 3);
        let short = DMatrix::from_element(2, 2, 1.0);
        assert!(ccf_fit(&k, &short, 2, 1, 0).is_err());
        let mut neg = DMatrix::<f64>::identity(3, 3);
        neg[(0, 1)] = -1.0;
        assert!(ccf_fit(&k, &neg, 2, 1, 0).is_err());
        let mut empty_row = DMatrix::<f64>::identity(3, 3);
        empty_row[(1, 1)] = 0.0;
        assert!(ccf_fit(&k, &empty_row, 2, 1, 0).is_err());
    }
}
