//! Clustering and classification metrics: K-means, clustering accuracy (AC),
//! normalized mutual information (NMI) and the 1-nearest-neighbor classifier.
//!
//! Point sets are `N x r` with one point per row, the layout of every
//! learned representation in the crate.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;
use crate::seeded_rng;

/// Lloyd restarts inside one [`kmeans`] call when driven by [`cluster_eval`].
pub const KMEANS_INITS: usize = 10;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    /// `k x r`, one centroid per row.
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroids.row(c).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn nearest(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = sq_dist(points, i, centroids, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Picks an index with probability proportional to `weights`; uniform when
/// every weight is zero.
fn weighted_pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return rng.gen_range(0..weights.len());
    }
    let mut target = rng.gen_range(0.0..sum);
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn kmeans_once(points: &DMatrix<f64>, k: usize, max_iter: usize, seed: u64) -> KMeans {
    let (n, r) = points.shape();
    let mut rng = seeded_rng(seed);

    // k-means++ seeding
    let mut centroids = DMatrix::zeros(k, r);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let pick = weighted_pick(&mut rng, &d2);
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points, i, &centroids);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(k, r);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += points.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).copy_from(&(sums.row(c) / counts[c] as f64));
            } else {
                // reseed at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                centroids.row_mut(c).copy_from(&points.row(far));
                dists[far] = 0.0;
                labels[far] = c;
            }
        }
    }
    for i in 0..n {
        labels[i] = nearest(points, i, &centroids).0;
    }
    let wcss = (0..n).map(|i| sq_dist(points, i, &centroids, labels[i])).sum();
    KMeans {
        labels,
        centroids,
        wcss,
    }
}

/// Lloyd's algorithm with k-means++ seeding, keeping the restart with the
/// lowest within-cluster sum of squares. Restart `i` is seeded from the
/// `i`-th draw of a generator seeded with `seed`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    ensure_finite(points, "points")?;
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!(
            "cluster count must satisfy 1 <= k <= N, got k={k}, N={n}"
        )));
    }
    if restarts == 0 {
        return Err(Error::InvalidParam("restarts must be >= 1".into()));
    }
    let mut seeds = seeded_rng(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts {
        let run = kmeans_once(points, k, max_iter.max(1), seeds.gen());
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn check_lengths(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidParam("label sequences are empty".into()));
    }
    Ok(())
}

/// Maps arbitrary label values to `0..m` in increasing order.
fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let ids: BTreeMap<usize, usize> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    (labels.iter().map(|v| ids[v]).collect(), ids.len())
}

/// Counts `table[a][b]` of samples with predicted cluster `a` and class `b`.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<usize>> {
    let (p, np) = dense_labels(pred);
    let (t, nt) = dense_labels(truth);
    let mut table = vec![vec![0usize; nt]; np];
    for (a, b) in p.into_iter().zip(t) {
        table[a][b] += 1;
    }
    table
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials). Returns `assign[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[col] = row matched to col (1-based; 0 = none)
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Fraction of samples whose cluster maps to their class under the best
/// one-to-one cluster-to-class matching.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let table = contingency(pred, truth);
    let m = table.len().max(table[0].len());
    let cost: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| -(table.get(a).and_then(|row| row.get(b)).copied().unwrap_or(0) as f64))
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    let hits: f64 = assign.iter().enumerate().map(|(a, &b)| -cost[a][b]).sum();
    Ok(hits / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the larger of the two entropies.
/// Defined as 0 when both partitions are a single cluster.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let n = pred.len() as f64;
    let table = contingency(pred, truth);
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..table[0].len())
        .map(|b| table.iter().map(|r| r[b]).sum())
        .collect();
    let mut mi = 0.0;
    for (a, row) in table.iter().enumerate() {
        for (b, &nab) in row.iter().enumerate() {
            if nab > 0 {
                let nab = nab as f64;
                mi += nab / n * (n * nab / (rows[a] as f64 * cols[b] as f64)).ln();
            }
        }
    }
    let h = entropy(rows.into_iter(), n).max(entropy(cols.into_iter(), n));
    if h <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / h).clamp(0.0, 1.0))
}

/// Labels each test row with the label of its Euclidean nearest training
/// row; ties go to the lowest training index.
pub fn knn1_classify(
    train: &DMatrix<f64>,
    train_labels: &[usize],
    test: &DMatrix<f64>,
) -> Result<Vec<usize>> {
    if train.nrows() == 0 {
        return Err(Error::InvalidParam("training set is empty".into()));
    }
    if train.nrows() != train_labels.len() {
        return Err(Error::LengthMismatch {
            left: train.nrows(),
            right: train_labels.len(),
        });
    }
    if train.ncols() != test.ncols() {
        return Err(Error::Shape {
            what: "test points",
            expected: format!("? x {}", train.ncols()),
            got: format!("{}x{}", test.nrows(), test.ncols()),
        });
    }
    Ok((0..test.nrows())
        .map(|t| {
            let mut best = (0, f64::INFINITY);
            for i in 0..train.nrows() {
                let d: f64 = (train.row(i) - test.row(t)).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            train_labels[best.0]
        })
        .collect())
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// AC and NMI of one clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub ac: f64,
    pub nmi: f64,
}

impl EvalResult {
    pub fn score(pred: &[usize], truth: &[usize]) -> Result<Self> {
        Ok(Self {
            ac: clustering_accuracy(pred, truth)?,
            nmi: nmi(pred, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub runs: Vec<EvalResult>,
    pub ac: Summary,
    pub nmi: Summary,
}

impl EvalSummary {
    pub fn from_runs(runs: Vec<EvalResult>) -> Self {
        let ac: Vec<f64> = runs.iter().map(|r| r.ac).collect();
        let nmi: Vec<f64> = runs.iter().map(|r| r.nmi).collect();
        Self {
            ac: Summary::of(&ac),
            nmi: Summary::of(&nmi),
            runs,
        }
    }
}

/// Runs K-means `runs` times on `points` (each run seeded from `seed`) and
/// scores every run against `truth`.
pub fn cluster_eval(points: &DMatrix<f64>, truth: &[usize], k: usize, runs: usize, seed: u64) -> Result<EvalSummary> {
    let mut seeds = seeded_rng(seed);
    let mut results = Vec::with_capacity(runs);
    for _ in 0..runs {
        let km = kmeans(points, k, KMEANS_INITS, KMEANS_MAX_ITER, seeds.gen())?;
        results.push(EvalResult::score(&km.labels, truth)?);
    }
    Ok(EvalSummary::from_runs(results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force_ac(pred: &[usize], truth: &[usize]) -> f64 {
        let (p, np) = dense_labels(pred);
        let (t, nt) = dense_labels(truth);
        let m = np.max(nt);
        permutations(m)
            .iter()
            .map(|perm| p.iter().zip(&t).filter(|(a, b)| perm[**a] == **b).count())
            .max()
            .unwrap() as f64
            / pred.len() as f64
    }

    fn direct_nmi(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let max_a = *a.iter().max().unwrap();
        let max_b = *b.iter().max().unwrap();
        let count = |f: &dyn Fn(usize) -> bool| (0..a.len()).filter(|&i| f(i)).count() as f64;
        let mut mi = 0.0;
        let mut ha = 0.0;
        let mut hb = 0.0;
        for x in 0..=max_a {
            let px = count(&|i| a[i] == x) / n;
            if px > 0.0 {
                ha -= px * px.log2();
            }
            for y in 0..=max_b {
                let py = count(&|i| b[i] == y) / n;
                let pxy = count(&|i| a[i] == x && b[i] == y) / n;
                if pxy > 0.0 {
                    mi += pxy * (pxy / (px * py)).log2();
                }
            }
        }
        for y in 0..=max_b {
            let py = count(&|i| b[i] == y) / n;
            if py > 0.0 {
                hb -= py * py.log2();
            }
        }
        let h = f64::max(ha, hb);
        if h == 0.0 {
            0.0
        } else {
            mi / h
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(clustering_accuracy(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap(), 0.5);
        assert!(matches!(
            clustering_accuracy(&[0, 1], &[0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_with_unequal_cluster_counts() {
        // three clusters against two classes: the best matching leaves one cluster unmatched
        let acc = clustering_accuracy(&[0, 0, 1, 2, 2], &[0, 0, 1, 1, 1]).unwrap();
        assert!((acc - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_matches_permutation_search() {
        let mut rng = seeded_rng(4);
        for _ in 0..300 {
            let n = rng.gen_range(1..=8);
            let k1 = rng.gen_range(1..=4);
            let k2 = rng.gen_range(1..=4);
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k1)).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k2)).collect();
            assert_eq!(clustering_accuracy(&pred, &truth).unwrap(), brute_force_ac(&pred, &truth));
        }
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = seeded_rng(9);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect())
                    .collect();
                let assign = min_cost_assignment(&cost);
                let got: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                let best = permutations(n)
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                assert!((got - best).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(nmi(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap().abs() < 1e-15);
        assert_eq!(nmi(&[3, 3], &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_symmetric_and_matches_direct_computation() {
        let mut rng = seeded_rng(12);
        for _ in 0..100 {
            let n = rng.gen_range(2..40);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let ab = nmi(&a, &b).unwrap();
            assert!((ab - nmi(&b, &a).unwrap()).abs() <= 1e-12);
            assert!((ab - direct_nmi(&a, &b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn knn_examples() {
        let train = DMatrix::from_row_slice(2, 1, &[0.0, 10.0]);
        assert_eq!(knn1_classify(&train, &[7, 9], &DMatrix::from_row_slice(1, 1, &[3.0])).unwrap(), vec![7]);
        assert_eq!(knn1_classify(&train, &[7, 9], &DMatrix::from_row_slice(1, 1, &[10.0])).unwrap(), vec![9]);
        // equidistant: lowest training index wins
        assert_eq!(knn1_classify(&train, &[7, 9], &DMatrix::from_row_slice(1, 1, &[5.0])).unwrap(), vec![7]);
        assert!(knn1_classify(&DMatrix::zeros(0, 1), &[], &train).is_err());
    }

    #[test]
    fn knn_matches_scan() {
        let mut rng = seeded_rng(2);
        let train = DMatrix::from_fn(20, 3, |_, _| rng.gen_range(0.0..1.0));
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let test = DMatrix::from_fn(15, 3, |_, _| rng.gen_range(0.0..1.0));
        let got = knn1_classify(&train, &labels, &test).unwrap();
        for t in 0..15 {
            let mut best = 0;
            for i in 1..20 {
                let di: f64 = (0..3).map(|c| (train[(i, c)] - test[(t, c)]).powi(2)).sum();
                let db: f64 = (0..3).map(|c| (train[(best, c)] - test[(t, c)]).powi(2)).sum();
                if di < db {
                    best = i;
                }
            }
            assert_eq!(got[t], labels[best]);
        }
    }

    #[test]
    fn kmeans_separated_pairs() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 5.0, 5.0, 0.0, 0.0, 5.0, 5.0]);
        let km = kmeans(&pts, 2, 3, 100, 1).unwrap();
        assert_eq!(km.wcss, 0.0);
        assert_eq!(km.labels[0], km.labels[2]);
        assert_eq!(km.labels[1], km.labels[3]);
        assert_ne!(km.labels[0], km.labels[1]);
    }

    #[test]
    fn kmeans_one_cluster_per_point() {
        let mut rng = seeded_rng(3);
        let pts = DMatrix::from_fn(7, 2, |_, _| rng.gen_range(0.0..1.0));
        let km = kmeans(&pts, 7, 1, 50, 0).unwrap();
        assert_eq!(km.wcss, 0.0);
        let mut labels = km.labels.clone();
        labels.sort();
        assert_eq!(labels, (0..7).collect::<Vec<_>>());
        assert!(kmeans(&pts, 8, 1, 50, 0).is_err());
    }

    #[test]
    fn kmeans_beats_random_assignments() {
        let mut rng = seeded_rng(5);
        let pts = DMatrix::from_fn(30, 2, |_, _| rng.gen_range(0.0..1.0));
        let km = kmeans(&pts, 3, 5, 100, 5).unwrap();
        for _ in 0..50 {
            let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
            let mut wcss = 0.0;
            for c in 0..3 {
                let members: Vec<usize> = (0..30).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = nalgebra::RowDVector::zeros(2);
                for &i in &members {
                    mean += pts.row(i);
                }
                mean /= members.len() as f64;
                wcss += members.iter().map(|&i| (pts.row(i) - &mean).norm_squared()).sum::<f64>();
            }
            assert!(km.wcss <= wcss);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = seeded_rng(6);
        let pts = DMatrix::from_fn(25, 3, |_, _| rng.gen_range(0.0..1.0));
        assert_eq!(kmeans(&pts, 4, 5, 100, 11).unwrap(), kmeans(&pts, 4, 5, 100, 11).unwrap());
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Summary::of(&[0.5]).std, 0.0);
    }
}
