//! Conjugate Gaussian linear-model core.
//!
//! Everything downstream works from segment sufficient statistics
//! `(A, b, c, n) = (Σ x xᵀ, Σ x y, Σ y², count)`. Cumulative [`PrefixSums`]
//! turn any contiguous segment into one subtraction, and the posterior and
//! evidence of a segment depend on the data only through these statistics.

mod marginal;
mod posterior;
mod stats;

pub use marginal::{log_marginal, log_marginal_direct};
pub use posterior::{
    predictive_mean, predictive_variance, ridge_posterior, ridge_posterior_jittered,
    GaussianPosterior, GaussianPrior,
};
pub use stats::{PrefixSums, SuffStats};

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

/// Symmetrises `m` in place: `m ← (m + mᵀ)/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn cholesky(mut m: DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    symmetrize(&mut m);
    Cholesky::new(m).ok_or(Error::NotPositiveDefinite(what))
}

/// `log det` of the factored matrix.
pub(crate) fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `vᵀ M⁻¹ v` for `M = L Lᵀ`, via one triangular solve.
pub(crate) fn chol_quad_inv(chol: &Cholesky<f64, Dyn>, v: &nalgebra::DVector<f64>) -> f64 {
    let l = chol.l();
    let z = l
        .solve_lower_triangular(v)
        .expect("Cholesky factor has a positive diagonal");
    z.norm_squared()
}
