use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l21::{l21_columns, l21_rows};
use crate::linalg::frob2;
use crate::types::{Dataset, FactorState, HyperParams, LabelConstraint};

/// The four weighted groups of the objective, kept apart for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `|X - E - X W Z^T A^T|_F^2`
    pub reconstruction: f64,
    /// `gamma * sum_j |e_j|`
    pub sparse_error: f64,
    /// `alpha * (|X - XQ|^2 + |V^T - V^T Q|^2 + |P^T X - P^T X Q|^2)`
    pub adaptive: f64,
    /// `beta * (|A_L - X_L^T P|^2 + |A_U - X_U^T P|^2 + sum_i |p^i|)`
    pub label: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.sparse_error + self.adaptive + self.label
    }
}

pub(crate) fn check_shapes(ds: &Dataset, state: &FactorState, lc: &LabelConstraint) -> Result<()> {
    let (d, n, l, u, c) = (
        ds.dim(),
        ds.num_samples(),
        ds.num_labeled(),
        ds.num_unlabeled(),
        ds.num_classes(),
    );
    let r = state.w.ncols();
    let expect = [
        ("w", &state.w, n, r),
        ("z_l", &state.z_l, c, r),
        ("z_u", &state.z_u, c, r),
        ("e", &state.e, d, n),
        ("q", &state.q, n, n),
        ("p", &state.p, d, c),
        ("a_l", &lc.a_l, l, c),
        ("a_u", &lc.a_u, u, c),
    ];
    for (what, m, rows, cols) in expect {
        if m.shape() != (rows, cols) {
            return Err(Error::Shape {
                what,
                expected: format!("{rows}x{cols}"),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
    }
    if state.s_diag.len() != n || state.b_diag.len() != d {
        return Err(Error::Shape {
            what: "reweighting diagonals",
            expected: format!("{n} and {d}"),
            got: format!("{} and {}", state.s_diag.len(), state.b_diag.len()),
        });
    }
    Ok(())
}

/// `M (I - Q)` without forming `I - Q`.
pub(crate) fn times_i_minus_q(m: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    m - m * q
}

/// Residual `X - E - X W V^T`.
pub(crate) fn residual(x: &DMatrix<f64>, e: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    x - e - (x * w) * v.transpose()
}

pub fn objective(
    ds: &Dataset,
    hp: &HyperParams,
    state: &FactorState,
    lc: &LabelConstraint,
) -> Result<ObjectiveTerms> {
    check_shapes(ds, state, lc)?;
    let x = ds.x();
    let v = lc.representation(&state.z_l, &state.z_u);
    let reconstruction = frob2(&residual(x, &state.e, &state.w, &v));
    let sparse_error = hp.gamma * l21_columns(&state.e)?;

    let adaptive = if hp.alpha == 0.0 {
        0.0
    } else {
        let ptx = state.p.transpose() * x;
        hp.alpha
            * (frob2(&times_i_minus_q(x, &state.q))
                + frob2(&times_i_minus_q(&v.transpose(), &state.q))
                + frob2(&times_i_minus_q(&ptx, &state.q)))
    };

    let fit_l = frob2(&(&lc.a_l - ds.x_labeled().transpose() * &state.p));
    let fit_u = frob2(&(&lc.a_u - ds.x_unlabeled().transpose() * &state.p));
    let label = hp.beta * (fit_l + fit_u + l21_rows(&state.p)?);

    Ok(ObjectiveTerms {
        reconstruction,
        sparse_error,
        adaptive,
        label,
    })
}
