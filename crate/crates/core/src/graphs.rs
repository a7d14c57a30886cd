//! Neighborhood weight constructions, the graph Laplacian, and the
//! reconstruction-error score used to compare them.
//!
//! Weight matrices follow the column convention of the adaptive weights: the
//! weights used to rebuild sample `j` live in column `j`, so `X Q` is the
//! reconstruction of `X`. The Gaussian and cosine graphs are symmetric, so
//! the convention only matters for the LLE weights.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{column_norms, ensure_finite, ensure_symmetric, frob2, pairwise_sq_dists};

/// Nonnegative `N x N` weights with an exactly zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix(DMatrix<f64>);

impl WeightMatrix {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() {
            return Err(Error::Shape {
                what: "weight matrix",
                expected: "square".into(),
                got: format!("{}x{}", q.nrows(), q.ncols()),
            });
        }
        ensure_finite(&q, "weight matrix")?;
        if q.iter().any(|&v| v < 0.0) {
            return Err(Error::NegativeEntries {
                what: "weight matrix",
            });
        }
        if (0..q.nrows()).any(|i| q[(i, i)] != 0.0) {
            return Err(Error::InvalidParam(
                "weight matrix diagonal must be zero".into(),
            ));
        }
        Ok(Self(q))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

/// For each sample, the indices of its `k` nearest other samples under
/// Euclidean distance. With `with_ties`, every sample at exactly the k-th
/// distance is included as well; otherwise ties go to the lower index.
pub fn nearest_neighbors(sq_dists: &DMatrix<f64>, k: usize, with_ties: bool) -> Vec<Vec<usize>> {
    let n = sq_dists.nrows();
    (0..n)
        .map(|i| {
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                sq_dists[(i, a)]
                    .partial_cmp(&sq_dists[(i, b)])
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let k = k.min(order.len());
            if k == 0 {
                return Vec::new();
            }
            if with_ties {
                let cutoff = sq_dists[(i, order[k - 1])];
                order
                    .into_iter()
                    .take_while(|&j| sq_dists[(i, j)] <= cutoff)
                    .collect()
            } else {
                order.truncate(k);
                order
            }
        })
        .collect()
}

/// Symmetrized kNN adjacency: `i ~ j` when either is among the other's
/// neighbors. Ties at the k-th distance are included.
pub fn knn_adjacency(x: &DMatrix<f64>, k: usize) -> Vec<Vec<bool>> {
    let n = x.ncols();
    let d2 = pairwise_sq_dists(x);
    let mut adj = vec![vec![false; n]; n];
    for (i, nbrs) in nearest_neighbors(&d2, k, true).into_iter().enumerate() {
        for j in nbrs {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    adj
}

fn check_neighbors(n: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidParam(format!(
            "neighbor count must satisfy 1 <= k < N, got k={k}, N={n}"
        )));
    }
    Ok(())
}

/// Heat-kernel weights `exp(-d^2 / (2 sigma^2))` on the symmetrized kNN graph,
/// with `sigma` the median length of the graph's edges.
pub fn gaussian_weights(x: &DMatrix<f64>, k: usize) -> Result<WeightMatrix> {
    ensure_finite(x, "data matrix")?;
    let n = x.ncols();
    check_neighbors(n, k)?;
    let d2 = pairwise_sq_dists(x);
    let adj = knn_adjacency(x, k);

    let mut edge_lengths: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if adj[i][j] {
                edge_lengths.push(d2[(i, j)].sqrt());
            }
        }
    }
    let sigma = median(&mut edge_lengths);

    let q = DMatrix::from_fn(n, n, |i, j| {
        if i == j || !adj[i][j] {
            0.0
        } else {
            heat_kernel(d2[(i, j)], sigma)
        }
    });
    WeightMatrix::new(q)
}

/// `exp(-d2 / (2 sigma^2))`, with a zero bandwidth treated as the limit.
pub fn heat_kernel(d2: f64, sigma: f64) -> f64 {
    if d2 == 0.0 {
        1.0
    } else if sigma == 0.0 {
        0.0
    } else {
        (-d2 / (2.0 * sigma * sigma)).exp()
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Relative Tikhonov ridge added to each local Gram matrix.
pub const LLE_REGULARIZATION: f64 = 1e-3;

/// Locally linear reconstruction weights.
///
/// Column `i` holds the weights that rebuild sample `i` from its `k` nearest
/// neighbors: they minimize `w^T (G + rho I) w` over the probability simplex,
/// where `G` is the local Gram matrix of neighbor offsets and
/// `rho = 1e-3 tr(G) / k`.
pub fn lle_weights(x: &DMatrix<f64>, k: usize) -> Result<WeightMatrix> {
    ensure_finite(x, "data matrix")?;
    let n = x.ncols();
    check_neighbors(n, k)?;
    let d2 = pairwise_sq_dists(x);
    let neighbors = nearest_neighbors(&d2, k, false);

    let mut q = DMatrix::zeros(n, n);
    for (i, nbrs) in neighbors.iter().enumerate() {
        let gram = local_gram(x, i, nbrs);
        let w = simplex_least_squares(&gram);
        for (&j, &wj) in nbrs.iter().zip(w.iter()) {
            q[(j, i)] = wj;
        }
    }
    WeightMatrix::new(q)
}

/// Regularized Gram matrix of the offsets `x_j - x_i` over `nbrs`.
pub fn local_gram(x: &DMatrix<f64>, i: usize, nbrs: &[usize]) -> DMatrix<f64> {
    let k = nbrs.len();
    let mut offsets = DMatrix::zeros(x.nrows(), k);
    for (c, &j) in nbrs.iter().enumerate() {
        offsets.set_column(c, &(x.column(j) - x.column(i)));
    }
    let mut gram = offsets.transpose() * offsets;
    let ridge = LLE_REGULARIZATION * gram.trace() / k as f64;
    for d in 0..k {
        gram[(d, d)] += ridge;
    }
    gram
}

/// Minimizes `w^T G w` subject to `w >= 0`, `sum(w) = 1` with a primal
/// active-set method. `G` must be symmetric positive semidefinite; when it is
/// identically zero every feasible point is optimal and the uniform weights
/// are returned.
pub fn simplex_least_squares(gram: &DMatrix<f64>) -> DVector<f64> {
    let k = gram.nrows();
    let mut w = DVector::from_element(k, 1.0 / k as f64);
    if gram.iter().all(|&v| v == 0.0) {
        return w;
    }
    let mut free = vec![true; k];

    for _ in 0..(20 * k + 50) {
        let idx: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| gram[(idx[a], idx[b])]);
        let ones = DVector::from_element(idx.len(), 1.0);
        let y = match sub.clone().cholesky() {
            Some(ch) => ch.solve(&ones),
            None => match sub.lu().solve(&ones) {
                Some(y) => y,
                None => break,
            },
        };
        let total: f64 = y.sum();
        let mut step = DVector::zeros(k);
        for (a, &i) in idx.iter().enumerate() {
            step[i] = y[a] / total - w[i];
        }

        if step.amax() <= 1e-13 {
            // stationary on the free set: check the fixed multipliers
            let grad = gram * &w;
            let level = idx.iter().map(|&i| grad[i]).sum::<f64>() / idx.len() as f64;
            let scale = grad.amax().max(f64::MIN_POSITIVE);
            let release = (0..k)
                .filter(|&i| !free[i])
                .map(|i| (i, grad[i] - level))
                .filter(|&(_, mu)| mu < -1e-12 * scale)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal));
            match release {
                Some((i, _)) => free[i] = true,
                None => break,
            }
            continue;
        }

        let mut t = 1.0;
        let mut blocking = None;
        for &i in &idx {
            if step[i] < 0.0 {
                let ratio = -w[i] / step[i];
                if ratio < t {
                    t = ratio;
                    blocking = Some(i);
                }
            }
        }
        w += step * t;
        if let Some(b) = blocking {
            w[b] = 0.0;
            free[b] = false;
        }
    }
    w.iter_mut().for_each(|v| *v = v.max(0.0));
    let s = w.sum();
    w / s
}

/// `max(0, cos(x_i, x_j))` off the diagonal, zero on it.
pub fn cosine_weights(x: &DMatrix<f64>) -> Result<WeightMatrix> {
    ensure_finite(x, "data matrix")?;
    let norms = column_norms(x);
    if let Some(index) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroNormColumn { index });
    }
    let gram = x.transpose() * x;
    let n = x.ncols();
    let q = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (gram[(i, j)] / (norms[i] * norms[j])).clamp(0.0, 1.0)
        }
    });
    WeightMatrix::new(q)
}

/// `L = D - S` with `D` the diagonal of row sums.
pub fn laplacian(s: &WeightMatrix) -> Result<DMatrix<f64>> {
    let m = s.matrix();
    let scale = m.amax();
    ensure_symmetric(m, 1e-12 * (1.0 + scale), "weight matrix")?;
    let mut l = -m.clone();
    for i in 0..m.nrows() {
        l[(i, i)] += m.row(i).sum();
    }
    Ok(l)
}

/// `|X - X Q|_F^2 / |X|_F^2`.
pub fn reconstruction_error(x: &DMatrix<f64>, q: &WeightMatrix) -> Result<f64> {
    let n = x.ncols();
    if q.len() != n {
        return Err(Error::Shape {
            what: "weight matrix",
            expected: format!("{n}x{n}"),
            got: format!("{0}x{0}", q.len()),
        });
    }
    let denom = frob2(x);
    if denom == 0.0 {
        return Err(Error::InvalidParam(
            "reconstruction error undefined for a zero data matrix".into(),
        ));
    }
    Ok(frob2(&(x - x * q.matrix())) / denom)
}

/// Edges joining samples of different classes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CrossClassStats {
    /// Off-diagonal entries above the threshold whose endpoints disagree.
    pub cross_edges: usize,
    /// Off-diagonal entries above the threshold.
    pub total_edges: usize,
    /// Share of the total weight carried by cross-class entries.
    pub cross_weight_fraction: f64,
}

/// Counts cross-class entries of `q`. An entry counts as an edge when it
/// exceeds `rel_threshold * max(q)`.
pub fn cross_class_stats(q: &WeightMatrix, classes: &[usize], rel_threshold: f64) -> CrossClassStats {
    let m = q.matrix();
    let cutoff = rel_threshold * m.amax();
    let (mut cross_edges, mut total_edges) = (0, 0);
    let (mut cross_w, mut total_w) = (0.0, 0.0);
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if i == j {
                continue;
            }
            total_w += v;
            let differs = classes[i] != classes[j];
            if differs {
                cross_w += v;
            }
            if v > cutoff {
                total_edges += 1;
                if differs {
                    cross_edges += 1;
                }
            }
        }
    }
    CrossClassStats {
        cross_edges,
        total_edges,
        cross_weight_fraction: if total_w > 0.0 { cross_w / total_w } else { 0.0 },
    }
}
