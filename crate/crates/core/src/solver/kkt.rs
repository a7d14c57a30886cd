//! Exact gradients of the objective with respect to each block, used for
//! stationarity and complementarity checks.

use nalgebra::{DMatrix, DVector};

use super::objective::times_i_minus_q;
use crate::types::{Dataset, FactorState, HyperParams, LabelConstraint};

fn h_times(q: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    // (I - Q)(I - Q)^T V
    let t = v - q.transpose() * v;
    &t - q * &t
}

/// `2 K W Z^T A^T A Z - 2 X^T (X - E) A Z`.
pub fn grad_w(ds: &Dataset, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let k = x.transpose() * x;
    (&k * &state.w * (v.transpose() * &v) - x.transpose() * ((x - &state.e) * &v)) * 2.0
}

/// Gradient of the objective with respect to `V = A Z` (one row per sample).
fn grad_v(ds: &Dataset, hp: &HyperParams, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let xw = x * &state.w;
    let resid = x - &state.e - &xw * v.transpose();
    let mut g = -(resid.transpose() * &xw) * 2.0;
    if hp.alpha != 0.0 {
        g += h_times(&state.q, &v) * (2.0 * hp.alpha);
    }
    g
}

pub fn grad_z_l(ds: &Dataset, hp: &HyperParams, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let gv = grad_v(ds, hp, state, lc);
    lc.a_l.transpose() * gv.rows(0, ds.num_labeled())
}

pub fn grad_z_u(ds: &Dataset, hp: &HyperParams, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let gv = grad_v(ds, hp, state, lc);
    lc.a_u.transpose() * gv.rows(ds.num_labeled(), ds.num_unlabeled())
}

pub fn grad_a_u(ds: &Dataset, hp: &HyperParams, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let gv = grad_v(ds, hp, state, lc);
    let mut g = gv.rows(ds.num_labeled(), ds.num_unlabeled()) * state.z_u.transpose();
    if hp.beta != 0.0 {
        g += (&lc.a_u - ds.x_unlabeled().transpose() * &state.p) * (2.0 * hp.beta);
    }
    g
}

/// `2 alpha (Y^T Y Q - Y^T Y)` with `Y = [X; V^T; P^T X]`. Diagonal entries
/// are fixed at zero and reported as zero.
pub fn grad_q(ds: &Dataset, hp: &HyperParams, state: &FactorState, lc: &LabelConstraint) -> DMatrix<f64> {
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let ptx = state.p.transpose() * x;
    let mut g = DMatrix::zeros(x.ncols(), x.ncols());
    for view in [x.clone(), v.transpose(), ptx] {
        let r = times_i_minus_q(&view, &state.q);
        g -= view.transpose() * r;
    }
    g *= 2.0 * hp.alpha;
    g.fill_diagonal(0.0);
    g
}

/// Gradient of `|aleph - E|^2 + gamma tr(E S E^T)` at `e`.
pub fn e_gradient(aleph: &DMatrix<f64>, e: &DMatrix<f64>, s_diag: &DVector<f64>, gamma: f64) -> DMatrix<f64> {
    let mut g = (e - aleph) * 2.0;
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col += e.column(j) * (2.0 * gamma * s_diag[j]);
    }
    g
}

/// Gradient of the reweighted predictor problem at `state.p`:
/// `2 a X H X^T P + 2 b X_L (X_L^T P - A_L) + 2 b X_U (X_U^T P - A_U) + 2 b B P`.
pub fn p_gradient(
    ds: &Dataset,
    state: &FactorState,
    lc: &LabelConstraint,
    alpha: f64,
    beta: f64,
) -> DMatrix<f64> {
    let x = ds.x();
    let p = &state.p;
    let xiq = times_i_minus_q(x, &state.q);
    let (x_l, x_u) = (ds.x_labeled(), ds.x_unlabeled());
    let mut g = &xiq * (xiq.transpose() * p) * (2.0 * alpha);
    g += x_l * (x_l.transpose() * p - &lc.a_l) * (2.0 * beta);
    g += x_u * (x_u.transpose() * p - &lc.a_u) * (2.0 * beta);
    for (i, mut row) in g.row_iter_mut().enumerate() {
        row += p.row(i) * (2.0 * beta * state.b_diag[i]);
    }
    g
}

/// Largest `min(x_ij, |g_ij|)` relative to `max |g|`; zero means exact
/// complementary slackness.
pub fn complementarity(x: &DMatrix<f64>, grad: &DMatrix<f64>) -> f64 {
    let scale = grad.amax();
    if scale == 0.0 {
        return 0.0;
    }
    x.iter()
        .zip(grad.iter())
        .map(|(&v, &g)| v.min(g.abs()))
        .fold(0.0, f64::max)
        / scale
}
