use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::stats::check_dim;
use super::{chol_log_det, chol_quad_inv, cholesky, SuffStats};
use crate::{Error, Result};

/// Log-evidence of one segment under `w ~ N(0, λ⁻¹ I)` and noise `σ²`,
/// evaluated from its sufficient statistics:
///
/// ```text
/// ℓ = −(n/2) log(2πσ²) − ½ log det(I + λ⁻¹σ⁻² A) − (1/2σ²)(c − σ⁻² bᵀ Σ b),
/// Σ = (λ I + σ⁻² A)⁻¹.
/// ```
///
/// The determinant carries the `σ⁻²` factor so the value is the exact
/// marginal density of `y ~ N(0, σ² I + λ⁻¹ X Xᵀ)` for any noise level.
pub fn log_marginal(stats: &SuffStats, lambda: f64, noise_var: f64) -> Result<f64> {
    check_positive(lambda, noise_var)?;
    if stats.n == 0 {
        return Ok(0.0);
    }
    let d = stats.dim();
    let eye = DMatrix::<f64>::identity(d, d);
    let scaled = &eye + &stats.gram / (lambda * noise_var);
    let log_det = chol_log_det(&cholesky(scaled, "I + A/(λσ²)")?);
    let precision = &eye * lambda + &stats.gram / noise_var;
    let quad = chol_quad_inv(&cholesky(precision, "λI + A/σ²")?, &stats.xy);
    let n = stats.n as f64;
    Ok(-0.5 * n * (2.0 * PI * noise_var).ln()
        - 0.5 * log_det
        - (stats.yy - quad / noise_var) / (2.0 * noise_var))
}

/// Log-density of `y` under `N(0, σ² I + λ⁻¹ X Xᵀ)`, built directly from
/// the `n × d` design. Independent of [`log_marginal`]'s statistics path.
pub fn log_marginal_direct(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    noise_var: f64,
) -> Result<f64> {
    check_positive(lambda, noise_var)?;
    let n = design.nrows();
    check_dim(n, y.len())?;
    if n == 0 {
        return Ok(0.0);
    }
    let cov = DMatrix::<f64>::identity(n, n) * noise_var + design * design.transpose() / lambda;
    let chol = cholesky(cov, "marginal covariance")?;
    Ok(-0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * chol_log_det(&chol) - 0.5 * chol_quad_inv(&chol, y))
}

fn check_positive(lambda: f64, noise_var: f64) -> Result<()> {
    if lambda > 0.0 && noise_var > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "λ and σ² must be positive, got λ={lambda}, σ²={noise_var}"
        )))
    }
}
