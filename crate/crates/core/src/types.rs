//! Domain types shared by every solver.

use nalgebra::{DMatrix, DVector, DMatrixView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ensure_finite;

/// A partially labeled data matrix.
///
/// Samples are stored as columns (`D x N`). The first `num_labeled` columns
/// are labeled; `labels[j]` is the class of column `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        ensure_finite(&x, "data matrix")?;
        let n = x.ncols();
        let l = labels.len();
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if l == 0 || l >= n {
            return Err(Error::InvalidDataset(format!(
                "labeled count must satisfy 1 <= l < N, got l={l}, N={n}"
            )));
        }
        let mut seen = vec![false; num_classes];
        for &c in &labels {
            if c >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "label {c} out of range for {num_classes} classes"
                )));
            }
            seen[c] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidDataset(format!(
                "class {missing} has no labeled sample"
            )));
        }
        Ok(Self {
            x,
            labels,
            num_classes,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn x_labeled(&self) -> DMatrixView<'_, f64> {
        self.x.columns(0, self.num_labeled())
    }

    pub fn x_unlabeled(&self) -> DMatrixView<'_, f64> {
        self.x.columns(self.num_labeled(), self.num_unlabeled())
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.len()
    }

    pub fn num_unlabeled(&self) -> usize {
        self.x.ncols() - self.labels.len()
    }

    pub fn num_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// One-hot `l x c` indicator of the labeled samples.
    pub fn label_indicator(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.num_labeled(), self.num_classes);
        for (i, &c) in self.labels.iter().enumerate() {
            a[(i, c)] = 1.0;
        }
        a
    }
}

/// Solver hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Weight of the adaptive reconstruction term.
    pub alpha: f64,
    /// Weight of the label-prediction term.
    pub beta: f64,
    /// Weight of the sparse error term.
    pub gamma: f64,
    /// Factorization rank; `None` means `num_classes + 1`.
    pub rank: Option<usize>,
    /// Stop once the absolute objective change drops to this value.
    pub tol: f64,
    pub max_iter: usize,
    /// Floor for multiplicative-update denominators.
    pub eps_div: f64,
    /// Floor for the norms inside the reweighting diagonals.
    pub eps_norm: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1e4,
            beta: 1e-4,
            gamma: 1e4,
            rank: None,
            tol: 1e-4,
            max_iter: 200,
            eps_div: 1e-12,
            eps_norm: 1e-8,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be >= 1".into());
        }
        if !(self.eps_div > 0.0) || !(self.eps_norm > 0.0) {
            return bad("eps_div and eps_norm must be > 0".into());
        }
        if self.rank == Some(0) {
            return bad("rank must be >= 1".into());
        }
        Ok(())
    }

    pub fn resolved_rank(&self, num_classes: usize) -> usize {
        self.rank.unwrap_or(num_classes + 1)
    }
}

/// Class indicators for the labeled (`a_l`, fixed one-hot) and unlabeled
/// (`a_u`, learned) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelConstraint {
    pub a_l: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
}

impl LabelConstraint {
    pub fn num_classes(&self) -> usize {
        self.a_l.ncols()
    }

    /// Block-diagonal `[a_l 0; 0 a_u]`, shape `(l+u) x 2c`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (l, c) = self.a_l.shape();
        let u = self.a_u.nrows();
        let mut a = DMatrix::zeros(l + u, 2 * c);
        a.view_mut((0, 0), (l, c)).copy_from(&self.a_l);
        a.view_mut((l, c), (u, c)).copy_from(&self.a_u);
        a
    }

    /// `A Z` computed blockwise, one row per sample.
    pub fn representation(&self, z_l: &DMatrix<f64>, z_u: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.a_l.nrows();
        let u = self.a_u.nrows();
        let mut v = DMatrix::zeros(l + u, z_l.ncols());
        v.rows_mut(0, l).copy_from(&(&self.a_l * z_l));
        v.rows_mut(l, u).copy_from(&(&self.a_u * z_u));
        v
    }
}

/// Every variable the alternating solver carries between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    /// `N x r`; rows `0..l` belong to the labeled samples.
    pub w: DMatrix<f64>,
    pub z_l: DMatrix<f64>,
    pub z_u: DMatrix<f64>,
    /// Sparse error, `D x N`.
    pub e: DMatrix<f64>,
    /// Adaptive weights, `N x N`, zero diagonal.
    pub q: DMatrix<f64>,
    /// Linear label predictor, `D x c`.
    pub p: DMatrix<f64>,
    /// Column reweighting for the error term, length `N`.
    pub s_diag: DVector<f64>,
    /// Row reweighting for the predictor term, length `D`.
    pub b_diag: DVector<f64>,
}

impl FactorState {
    /// Stacked `[z_l; z_u]`.
    pub fn z(&self) -> DMatrix<f64> {
        let (c, r) = self.z_l.shape();
        let mut z = DMatrix::zeros(2 * c, r);
        z.rows_mut(0, c).copy_from(&self.z_l);
        z.rows_mut(c, c).copy_from(&self.z_u);
        z
    }

    /// Checks nonnegativity, the zero diagonal of `q`, positivity of the
    /// reweighting diagonals and finiteness. Returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let nonneg = [
            ("w", &self.w),
            ("z_l", &self.z_l),
            ("z_u", &self.z_u),
            ("q", &self.q),
        ];
        for (name, m) in nonneg {
            if let Some(v) = m.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(format!("{name} has entry {v}"));
            }
        }
        if (0..self.q.nrows()).any(|i| self.q[(i, i)] != 0.0) {
            return Err("q has a nonzero diagonal entry".into());
        }
        if !self.e.iter().chain(self.p.iter()).all(|v| v.is_finite()) {
            return Err("e or p is not finite".into());
        }
        if !self
            .s_diag
            .iter()
            .chain(self.b_diag.iter())
            .all(|&v| v > 0.0 && v.is_finite())
        {
            return Err("reweighting diagonal is not strictly positive".into());
        }
        Ok(())
    }
}

/// Objective value after each completed iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub objective_values: Vec<f64>,
    pub converged: bool,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.objective_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective_values.is_empty()
    }

    /// Largest increase between consecutive values (0 if monotone).
    pub fn max_increase(&self) -> f64 {
        self.objective_values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, slack: f64) -> bool {
        self.max_increase() <= slack
    }
}
