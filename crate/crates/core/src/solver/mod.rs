//! The RS²ACF alternating solver.
//!
//! One iteration updates, in order: `Z_L`, `Z_U` and `A_U`; the predictor
//! `P`; the basis weights `W`; the sparse error `E`; the adaptive weights
//! `Q`; and finally the two reweighting diagonals. The representation
//! returned to callers is `A Z`.
//!
//! Multiplicative steps split mixed-sign terms (the coupling matrix
//! `H = (I - Q)(I - Q)^T`, the predicted scores `X^T P`, and kernels of
//! signed data) into positive and negative parts. Each multiplicative block
//! step is also checked against its own block objective and pulled back
//! toward the previous iterate until it does not increase it; for
//! nonnegative inputs the plain step already satisfies this.

mod kkt;
mod objective;

pub use kkt::{
    complementarity, e_gradient, grad_a_u, grad_q, grad_w, grad_z_l, grad_z_u, p_gradient,
};
pub use objective::{objective, ObjectiveTerms};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graphs::cosine_weights;
use crate::l21::{reweight_cols, reweight_rows};
use crate::linalg::{frob2, multiplicative_step};
use crate::types::{ConvergenceTrace, Dataset, FactorState, HyperParams, LabelConstraint};
use crate::{random_factor, seeded_rng};
use objective::{check_shapes, residual, times_i_minus_q};

/// How many times a block step is halved toward the previous iterate before
/// the previous iterate is kept. Sign-split steps can overshoot by many
/// orders of magnitude when a denominator nearly cancels, so this is large;
/// the loop stops early once the candidate reaches the previous iterate.
const MAX_BACKTRACK: usize = 200;

/// Blocks that [`Solver`] can hold fixed. Everything is updated by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    pub freeze_error: bool,
    pub freeze_weights: bool,
    pub freeze_indicator: bool,
    pub freeze_predictor: bool,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// `A Z`, one row per sample.
    pub representation: DMatrix<f64>,
    pub constraint: LabelConstraint,
    pub state: FactorState,
    pub trace: ConvergenceTrace,
}

impl FitResult {
    /// Hard labels for the unlabeled samples from the learned predictor.
    pub fn predicted_labels(&self, ds: &Dataset) -> Vec<usize> {
        predict_labels(&self.state.p, &ds.x_unlabeled().into_owned())
    }
}

/// Initial state: random `W` and `Z`, zero `E`, cosine `Q`, ridge predictor
/// `P = (X_L X_L^T + I)^{-1} X_L A_L`, `A_U = max(0, X_U^T P)` and unit
/// reweighting diagonals.
///
/// `W` (`N x r`) is drawn first and then the stacked `Z = [Z_L; Z_U]`
/// (`2c x r`), both column-major and uniform on (0, 1).
pub fn init_state(ds: &Dataset, hp: &HyperParams) -> Result<(FactorState, LabelConstraint)> {
    hp.validate()?;
    let (d, n, c) = (ds.dim(), ds.num_samples(), ds.num_classes());
    let r = hp.resolved_rank(c);
    let mut rng = seeded_rng(hp.seed);
    let w = random_factor(&mut rng, n, r);
    let z = random_factor(&mut rng, 2 * c, r);

    let a_l = ds.label_indicator();
    let x_l = ds.x_labeled();
    let mut gram = x_l * x_l.transpose();
    for i in 0..d {
        gram[(i, i)] += 1.0;
    }
    let rhs = x_l * &a_l;
    let p = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("X_L X_L^T + I".into()))?
        .solve(&rhs);
    let a_u = (ds.x_unlabeled().transpose() * &p).map(|v| v.max(0.0));

    let state = FactorState {
        w,
        z_l: z.rows(0, c).into_owned(),
        z_u: z.rows(c, c).into_owned(),
        e: DMatrix::zeros(d, n),
        q: cosine_weights(ds.x())?.into_inner(),
        p,
        s_diag: DVector::from_element(n, 1.0),
        b_diag: DVector::from_element(d, 1.0),
    };
    Ok((state, LabelConstraint { a_l, a_u }))
}

/// Accepts `proposal` if `block_objective` does not rise, otherwise halves
/// the step toward `current` until it does not.
fn safeguard<F>(current: &DMatrix<f64>, proposal: DMatrix<f64>, block_objective: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    let before = block_objective(current);
    let mut candidate = proposal;
    for _ in 0..MAX_BACKTRACK {
        if block_objective(&candidate) <= before {
            return candidate;
        }
        candidate = (current + &candidate) * 0.5;
        if candidate == *current {
            break;
        }
    }
    current.clone()
}

/// Multiplicative update of `W`:
/// `W <- W (X^T (X - E) A Z) / (K W Z^T A^T A Z)` with `K = X^T X`.
pub fn update_w(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    eps_div: f64,
) -> DMatrix<f64> {
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let target = x - &state.e;
    let num = x.transpose() * (&target * &v);
    let den = (x.transpose() * (x * &state.w)) * (v.transpose() * &v);
    let proposal = multiplicative_step(&state.w, &num, &den, eps_div);
    safeguard(&state.w, proposal, |w| frob2(&(&target - (x * w) * v.transpose())))
}

/// Shared products for the `Z_L`, `Z_U`, `A_U` block.
struct CouplingTerms {
    /// `X W`, `D x r`.
    xw: DMatrix<f64>,
    /// `W^T K W`, `r x r`.
    wkw: DMatrix<f64>,
    /// `(X - E)^T X W`, `N x r`.
    target_xw: DMatrix<f64>,
    /// Positive and negative parts of `H = (I - Q)(I - Q)^T`:
    /// `I + Q Q^T` and `Q + Q^T`. `None` when `alpha = 0`.
    h_parts: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl CouplingTerms {
    fn new(ds: &Dataset, state: &FactorState, alpha: f64) -> Self {
        let x = ds.x();
        let xw = x * &state.w;
        let wkw = xw.transpose() * &xw;
        let target_xw = (x - &state.e).transpose() * &xw;
        let h_parts = (alpha != 0.0).then(|| {
            let q = &state.q;
            let n = q.nrows();
            let plus = DMatrix::identity(n, n) + q * q.transpose();
            let minus = q + q.transpose();
            (plus, minus)
        });
        Self {
            xw,
            wkw,
            target_xw,
            h_parts,
        }
    }

    /// `(H+ V, H- V)`.
    fn h_times(&self, v: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        self.h_parts.as_ref().map(|(plus, minus)| (plus * v, minus * v))
    }
}

/// The part of the objective that depends on `Z_L`, `Z_U` and `A_U`.
fn indicator_block_objective(
    ds: &Dataset,
    hp: &HyperParams,
    state: &FactorState,
    xw: &DMatrix<f64>,
    a_l: &DMatrix<f64>,
    a_u: &DMatrix<f64>,
    z_l: &DMatrix<f64>,
    z_u: &DMatrix<f64>,
) -> f64 {
    let lc = LabelConstraint {
        a_l: a_l.clone(),
        a_u: a_u.clone(),
    };
    let v = lc.representation(z_l, z_u);
    let mut total = frob2(&(ds.x() - &state.e - xw * v.transpose()));
    if hp.alpha != 0.0 {
        total += hp.alpha * frob2(&times_i_minus_q(&v.transpose(), &state.q));
    }
    if hp.beta != 0.0 {
        total += hp.beta * frob2(&(a_u - ds.x_unlabeled().transpose() * &state.p));
    }
    total
}

/// Multiplicative updates of `Z_L`, then `Z_U`, then `A_U`, each using the
/// blocks already refreshed in this call.
///
/// With `V = A Z`, `T = (X - E)^T X W` and `H = H+ - H-`:
///
/// * `Z_L <- Z_L (A_L^T T_L + a A_L^T (H- V)_L) / (A_L^T A_L Z_L W^T K W + a A_L^T (H+ V)_L)`
/// * `Z_U` likewise on the unlabeled rows with `A_U`,
/// * `A_U <- A_U (b X_U^T P + T_U Z_U^T + a (H- V)_U Z_U^T)
///   / (A_U Z_U W^T K W Z_U^T + a (H+ V)_U Z_U^T + b A_U)`.
pub fn update_z_and_au(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    hp: &HyperParams,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (z_l, z_u) = update_z(ds, state, lc, hp);
    let a_u = update_indicator(ds, state, lc, hp, &z_l, &z_u);
    (z_l, z_u, a_u)
}

fn update_z(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    hp: &HyperParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (l, u) = (ds.num_labeled(), ds.num_unlabeled());
    let terms = CouplingTerms::new(ds, state, hp.alpha);
    let block = |z_l: &DMatrix<f64>, z_u: &DMatrix<f64>| {
        indicator_block_objective(ds, hp, state, &terms.xw, &lc.a_l, &lc.a_u, z_l, z_u)
    };

    // Z_L
    let v = lc.representation(&state.z_l, &state.z_u);
    let mut num = lc.a_l.transpose() * terms.target_xw.rows(0, l);
    let mut den = (lc.a_l.transpose() * &lc.a_l * &state.z_l) * &terms.wkw;
    if let Some((hv_plus, hv_minus)) = terms.h_times(&v) {
        num += lc.a_l.transpose() * hv_minus.rows(0, l) * hp.alpha;
        den += lc.a_l.transpose() * hv_plus.rows(0, l) * hp.alpha;
    }
    let proposal = multiplicative_step(&state.z_l, &num, &den, hp.eps_div);
    let z_l = safeguard(&state.z_l, proposal, |z| block(z, &state.z_u));

    // Z_U
    let v = lc.representation(&z_l, &state.z_u);
    let mut num = lc.a_u.transpose() * terms.target_xw.rows(l, u);
    let mut den = (lc.a_u.transpose() * &lc.a_u * &state.z_u) * &terms.wkw;
    if let Some((hv_plus, hv_minus)) = terms.h_times(&v) {
        num += lc.a_u.transpose() * hv_minus.rows(l, u) * hp.alpha;
        den += lc.a_u.transpose() * hv_plus.rows(l, u) * hp.alpha;
    }
    let proposal = multiplicative_step(&state.z_u, &num, &den, hp.eps_div);
    let z_u = safeguard(&state.z_u, proposal, |z| block(&z_l, z));
    (z_l, z_u)
}

fn update_indicator(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    hp: &HyperParams,
    z_l: &DMatrix<f64>,
    z_u: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (l, u) = (ds.num_labeled(), ds.num_unlabeled());
    let terms = CouplingTerms::new(ds, state, hp.alpha);
    let v = lc.representation(z_l, z_u);
    let a_u = &lc.a_u;

    let mut num = terms.target_xw.rows(l, u) * z_u.transpose();
    let mut den = a_u * (z_u * &terms.wkw * z_u.transpose());
    if let Some((hv_plus, hv_minus)) = terms.h_times(&v) {
        num += hv_minus.rows(l, u) * z_u.transpose() * hp.alpha;
        den += hv_plus.rows(l, u) * z_u.transpose() * hp.alpha;
    }
    if hp.beta != 0.0 {
        num += ds.x_unlabeled().transpose() * &state.p * hp.beta;
        den += a_u * hp.beta;
    }
    let proposal = multiplicative_step(a_u, &num, &den, hp.eps_div);
    safeguard(a_u, proposal, |a| {
        indicator_block_objective(ds, hp, state, &terms.xw, &lc.a_l, a, z_l, z_u)
    })
}

/// Closed-form error update `E = (X - X W Z^T A^T)(I + gamma S)^{-1}`; the
/// inverse is diagonal, so column `j` is scaled by `1 / (1 + gamma s_j)`.
pub fn update_e(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    gamma: f64,
) -> DMatrix<f64> {
    let v = lc.representation(&state.z_l, &state.z_u);
    let zero = DMatrix::zeros(ds.dim(), ds.num_samples());
    let mut e = residual(ds.x(), &zero, &state.w, &v);
    let aleph = e.clone();
    for (j, mut col) in e.column_iter_mut().enumerate() {
        col /= 1.0 + gamma * state.s_diag[j];
    }
    debug_assert!(
        e_gradient(&aleph, &e, &state.s_diag, gamma).norm() <= 1e-8 * (1.0 + aleph.norm()),
        "error update is not stationary"
    );
    e
}

/// Multiplicative update of the adaptive weights,
/// `Q <- Q (G+ + G- Q) / (G- + G+ Q)` with `G = Y^T Y`,
/// `Y = sqrt(alpha) [X; Z^T A^T; P^T X]` and `G+`, `G-` its positive and
/// negative parts, followed by zeroing the diagonal. For nonnegative `Y` this
/// is `Q (Y^T Y) / (Y^T Y Q)`. Skipped when `alpha = 0`.
pub fn update_q(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    alpha: f64,
    eps_div: f64,
) -> DMatrix<f64> {
    if alpha == 0.0 {
        return state.q.clone();
    }
    let y = stacked_views(ds, state, lc);
    let gram = y.transpose() * &y * alpha;
    let pos = gram.map(|v| v.max(0.0));
    let neg = gram.map(|v| (-v).max(0.0));
    let num = &pos + &neg * &state.q;
    let den = &neg + &pos * &state.q;
    let mut proposal = multiplicative_step(&state.q, &num, &den, eps_div);
    proposal.fill_diagonal(0.0);
    safeguard(&state.q, proposal, |q| alpha * frob2(&times_i_minus_q(&y, q)))
}

/// `[X; V^T; P^T X]`, the three views the adaptive weights reconstruct.
fn stacked_views(ds: &Dataset, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let ptx = state.p.transpose() * x;
    let (d, n) = x.shape();
    let (r, c) = (v.ncols(), ptx.nrows());
    let mut y = DMatrix::zeros(d + r + c, n);
    y.rows_mut(0, d).copy_from(x);
    y.rows_mut(d, r).copy_from(&v.transpose());
    y.rows_mut(d + r, c).copy_from(&ptx);
    y
}

/// Closed-form predictor
/// `P = beta (alpha X H X^T + beta X X^T + beta B)^{-1} (X_L A_L + X_U A_U)`.
///
/// Returns `P` unchanged when `beta = 0`, where the system is singular.
pub fn update_p(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    alpha: f64,
    beta: f64,
) -> Result<DMatrix<f64>> {
    if beta == 0.0 {
        return Ok(state.p.clone());
    }
    let x = ds.x();
    let mut system = x * x.transpose() * beta;
    if alpha != 0.0 {
        let xiq = times_i_minus_q(x, &state.q);
        system += &xiq * xiq.transpose() * alpha;
    }
    for i in 0..system.nrows() {
        system[(i, i)] += beta * state.b_diag[i];
    }
    let rhs = (ds.x_labeled() * &lc.a_l + ds.x_unlabeled() * &lc.a_u) * beta;
    let p = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => system
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("predictor system".into()))?,
    };
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("predictor system".into()));
    }
    // the residual of the normal equations is half the gradient
    debug_assert!(
        (&system * &p - &rhs).norm() <= 1e-9 * (system.norm() * p.norm() + rhs.norm()),
        "predictor solve is not stationary"
    );
    Ok(p)
}

/// Refreshes `(S, B)` from the current `E` and `P`.
pub fn update_diagonals(state: &FactorState, eps_norm: f64) -> (DVector<f64>, DVector<f64>) {
    (reweight_cols(&state.e, eps_norm), reweight_rows(&state.p, eps_norm))
}

/// Hard labels: row-wise argmax of `X_U^T P`, ties to the lower class.
pub fn predict_labels(p: &DMatrix<f64>, x_u: &DMatrix<f64>) -> Vec<usize> {
    let scores = x_u.transpose() * p;
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Step-by-step driver around the update rules.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    ds: &'a Dataset,
    hp: HyperParams,
    opts: FitOptions,
    state: FactorState,
    lc: LabelConstraint,
    last_objective: f64,
    trace: ConvergenceTrace,
}

impl<'a> Solver<'a> {
    pub fn new(ds: &'a Dataset, hp: HyperParams, opts: FitOptions) -> Result<Self> {
        let (state, lc) = init_state(ds, &hp)?;
        Self::from_state(ds, hp, opts, state, lc)
    }

    /// Starts from a caller-provided state.
    pub fn from_state(
        ds: &'a Dataset,
        hp: HyperParams,
        opts: FitOptions,
        state: FactorState,
        lc: LabelConstraint,
    ) -> Result<Self> {
        hp.validate()?;
        check_shapes(ds, &state, &lc)?;
        let last_objective = objective(ds, &hp, &state, &lc)?.total();
        Ok(Self {
            ds,
            hp,
            opts,
            state,
            lc,
            last_objective,
            trace: ConvergenceTrace::default(),
        })
    }

    pub fn state(&self) -> &FactorState {
        &self.state
    }

    pub fn constraint(&self) -> &LabelConstraint {
        &self.lc
    }

    pub fn trace(&self) -> &ConvergenceTrace {
        &self.trace
    }

    /// Runs one full iteration and returns the objective after it.
    pub fn step(&mut self) -> Result<f64> {
        let (ds, hp) = (self.ds, &self.hp);

        let (z_l, z_u) = update_z(ds, &self.state, &self.lc, hp);
        if !self.opts.freeze_indicator {
            self.lc.a_u = update_indicator(ds, &self.state, &self.lc, hp, &z_l, &z_u);
        }
        self.state.z_l = z_l;
        self.state.z_u = z_u;

        if !self.opts.freeze_predictor {
            self.state.p = update_p(ds, &self.state, &self.lc, hp.alpha, hp.beta)?;
        }

        self.state.w = update_w(ds, &self.state, &self.lc, hp.eps_div);

        if !self.opts.freeze_error {
            self.state.e = update_e(ds, &self.state, &self.lc, hp.gamma);
        }

        if !self.opts.freeze_weights {
            self.state.q = update_q(ds, &self.state, &self.lc, hp.alpha, hp.eps_div);
        }

        let (s_diag, b_diag) = update_diagonals(&self.state, hp.eps_norm);
        if !self.opts.freeze_error {
            self.state.s_diag = s_diag;
        }
        if !self.opts.freeze_predictor {
            self.state.b_diag = b_diag;
        }

        debug_assert!(
            self.state.check_invariants().is_ok(),
            "{:?}",
            self.state.check_invariants()
        );
        let value = objective(ds, hp, &self.state, &self.lc)?.total();
        self.trace.objective_values.push(value);
        Ok(value)
    }

    /// Iterates until the absolute objective change is at most `tol` or
    /// `max_iter` iterations have run.
    pub fn run(mut self) -> Result<FitResult> {
        for _ in 0..self.hp.max_iter {
            let value = self.step()?;
            let change = (self.last_objective - value).abs();
            self.last_objective = value;
            if change <= self.hp.tol {
                self.trace.converged = true;
                break;
            }
        }
        let representation = self.lc.representation(&self.state.z_l, &self.state.z_u);
        Ok(FitResult {
            representation,
            constraint: self.lc,
            state: self.state,
            trace: self.trace,
        })
    }
}

/// Fits the model with every block free.
pub fn fit(ds: &Dataset, hp: &HyperParams) -> Result<FitResult> {
    fit_with(ds, hp, FitOptions::default())
}

pub fn fit_with(ds: &Dataset, hp: &HyperParams, opts: FitOptions) -> Result<FitResult> {
    Solver::new(ds, *hp, opts)?.run()
}
