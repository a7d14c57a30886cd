//! Robust semi-supervised adaptive concept factorization (RS²ACF), the
//! NMF/CF/LCCF/CCF baselines it generalizes, and the graph and evaluation
//! tooling used to compare them.
//!
//! Data matrices are `D x N` with one sample per column. Factor matrices that
//! are indexed by sample (`W`, `V`, `A Z`) have one row per sample.

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod l21;
pub mod linalg;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use types::{ConvergenceTrace, Dataset, FactorState, HyperParams, LabelConstraint};

use nalgebra::DMatrix;
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator behind every seeded operation in the crate.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix with entries uniform on (0, 1), filled column-major.
pub fn random_factor(rng: &mut SeededRng, rows: usize, cols: usize) -> DMatrix<f64> {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.sample(Open01)).collect();
    DMatrix::from_vec(rows, cols, values)
}
