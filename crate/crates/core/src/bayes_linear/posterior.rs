use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::stats::check_dim;
use super::{chol_quad_inv, cholesky, SuffStats};
use crate::{Error, Result};

/// Gaussian prior `N(m₀, S₀)` over a weight vector, with `S₀⁻¹` cached.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl GaussianPrior {
    /// `N(0, λ⁻¹ I)`.
    pub fn isotropic(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("prior precision must be positive, got {lambda}")));
        }
        Ok(Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) / lambda,
            precision: DMatrix::identity(dim, dim) * lambda,
        })
    }

    /// General prior; `cov` must be symmetric positive definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        let precision = cholesky(cov.clone(), "prior covariance")?.inverse();
        Ok(Self { mean, cov, precision })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

/// Gaussian posterior over a weight vector, stored as its mean and the
/// Cholesky factor of its precision `S₀⁻¹ + σ⁻² A`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub precision_chol: Cholesky<f64, Dyn>,
    pub prior: GaussianPrior,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dense posterior covariance. Only meant for diagnostics and the
    /// transfer prior; predictive quantities go through the factor.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision_chol.inverse()
    }
}

/// Conditions `prior` on a segment with noise variance `noise_var`.
pub fn ridge_posterior(
    stats: &SuffStats,
    prior: &GaussianPrior,
    noise_var: f64,
) -> Result<GaussianPosterior> {
    ridge_posterior_jittered(stats, prior, noise_var, 0.0)
}

/// [`ridge_posterior`] with `jitter · I` added to the precision before
/// factoring. Zero jitter is the exact posterior.
pub fn ridge_posterior_jittered(
    stats: &SuffStats,
    prior: &GaussianPrior,
    noise_var: f64,
    jitter: f64,
) -> Result<GaussianPosterior> {
    check_dim(prior.dim(), stats.dim())?;
    if !(noise_var > 0.0) {
        return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
    }
    let d = prior.dim();
    let mut precision = prior.precision() + &stats.gram / noise_var;
    if jitter != 0.0 {
        precision += DMatrix::identity(d, d) * jitter;
    }
    let chol = cholesky(precision, "posterior precision")?;
    let rhs = prior.precision() * &prior.mean + &stats.xy / noise_var;
    let mean = chol.solve(&rhs);
    Ok(GaussianPosterior {
        mean,
        precision_chol: chol,
        prior: prior.clone(),
    })
}

/// `xᵀ μ`.
pub fn predictive_mean(post: &GaussianPosterior, x: &DVector<f64>) -> Result<f64> {
    check_dim(post.dim(), x.len())?;
    Ok(post.mean.dot(x))
}

/// `σ² + xᵀ Σ x`, with the quadratic form taken through the precision factor.
pub fn predictive_variance(post: &GaussianPosterior, x: &DVector<f64>, noise_var: f64) -> Result<f64> {
    check_dim(post.dim(), x.len())?;
    Ok(noise_var + chol_quad_inv(&post.precision_chol, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes_linear::PrefixSums;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_stats(pairs: &[(f64, f64)]) -> SuffStats {
        let xs: Vec<_> = pairs.iter().map(|p| DVector::from_element(1, p.0)).collect();
        let ys: Vec<_> = pairs.iter().map(|p| p.1).collect();
        SuffStats::from_samples(1, &xs, &ys).unwrap()
    }

    #[test]
    fn empty_data_returns_prior() {
        let prior = GaussianPrior::isotropic(1, 2.0).unwrap();
        let post = ridge_posterior(&SuffStats::zeros(1), &prior, 1.0).unwrap();
        assert_eq!(post.mean[0], 0.0);
        assert!((post.covariance()[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scalar_closed_forms() {
        let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
        let post = ridge_posterior(&scalar_stats(&[(1.0, 2.0)]), &prior, 1.0).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.covariance()[(0, 0)] - 0.5).abs() < 1e-15);

        let post = ridge_posterior(&scalar_stats(&[(1.0, 1.0), (2.0, 2.0)]), &prior, 1.0).unwrap();
        assert!((post.mean[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((post.covariance()[(0, 0)] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn predictive_mean_cases() {
        let prior = GaussianPrior::isotropic(2, 1.0).unwrap();
        let mut post = ridge_posterior(&SuffStats::zeros(2), &prior, 1.0).unwrap();
        assert_eq!(predictive_mean(&post, &DVector::from_vec(vec![3.0, -4.0])).unwrap(), 0.0);
        post.mean = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(predictive_mean(&post, &DVector::from_vec(vec![2.0, 3.0])).unwrap(), -1.0);
        assert_eq!(predictive_mean(&post, &DVector::zeros(2)).unwrap(), 0.0);
        assert!(predictive_mean(&post, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn predictive_variance_cases() {
        let lambda = 4.0;
        let prior = GaussianPrior::isotropic(2, lambda).unwrap();
        let post = ridge_posterior(&SuffStats::zeros(2), &prior, 0.3).unwrap();
        assert_eq!(predictive_variance(&post, &DVector::zeros(2), 0.3).unwrap(), 0.3);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let v = predictive_variance(&post, &x, 0.3).unwrap();
        assert!((v - (0.3 + x.norm_squared() / lambda)).abs() < 1e-14);
    }

    #[test]
    fn predictive_variance_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let xs: Vec<_> = (0..4)
                .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let ys: Vec<_> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let stats = SuffStats::from_samples(2, &xs, &ys).unwrap();
            let prior = GaussianPrior::isotropic(2, 0.7).unwrap();
            let post = ridge_posterior(&stats, &prior, 0.5).unwrap();
            // dense oracle: explicit inverse via LU
            let prec = DMatrix::identity(2, 2) * 0.7 + &stats.gram / 0.5;
            let sigma = prec.try_inverse().unwrap();
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let expected = 0.5 + (x.transpose() * &sigma * &x)[(0, 0)];
            let got = predictive_variance(&post, &x, 0.5).unwrap();
            assert!((got - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn sequential_conditioning_equals_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let d = 3;
            let xs: Vec<_> = (0..9)
                .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5)))
                .collect();
            let ys: Vec<_> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = PrefixSums::from_samples(d, &xs, &ys).unwrap();
            let first = p.between(0, 4).unwrap();
            let second = p.between(4, 9).unwrap();
            let prior = GaussianPrior::isotropic(d, 1.3).unwrap();
            let batch = ridge_posterior(&first.plus(&second), &prior, 0.4).unwrap();
            let mid = ridge_posterior(&first, &prior, 0.4).unwrap();
            let mid_prior = GaussianPrior::new(mid.mean.clone(), mid.covariance()).unwrap();
            let seq = ridge_posterior(&second, &mid_prior, 0.4).unwrap();
            assert!((&batch.mean - &seq.mean).amax() < 1e-10);
        }
    }

    #[test]
    fn shrinkage_grows_with_lambda() {
        let stats = scalar_stats(&[(1.0, 2.0), (0.5, 0.7), (-1.0, -1.5)]);
        let mut last = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 3.0, 10.0, 100.0] {
            let prior = GaussianPrior::isotropic(1, lambda).unwrap();
            let norm = ridge_posterior(&stats, &prior, 0.5).unwrap().mean.norm();
            assert!(norm <= last);
            last = norm;
        }
    }

    #[test]
    fn predictive_variance_shrinks_along_a_direction() {
        let x = DVector::from_vec(vec![0.6, -0.8]);
        let prior = GaussianPrior::isotropic(2, 1.0).unwrap();
        let mut stats = SuffStats::zeros(2);
        let mut last = f64::INFINITY;
        for i in 0..10 {
            let v = predictive_variance(&ridge_posterior(&stats, &prior, 0.2).unwrap(), &x, 0.2).unwrap();
            assert!(v >= 0.2);
            assert!(v <= last + 1e-15);
            last = v;
            stats.add_sample(&(&x * (1.0 + i as f64 * 0.1)), 0.3).unwrap();
        }
    }

    #[test]
    fn jitter_changes_nothing_at_zero_and_rejects_bad_noise() {
        let stats = scalar_stats(&[(1.0, 2.0)]);
        let prior = GaussianPrior::isotropic(1, 1.0).unwrap();
        let a = ridge_posterior(&stats, &prior, 1.0).unwrap();
        let b = ridge_posterior_jittered(&stats, &prior, 1.0, 0.0).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(ridge_posterior(&stats, &prior, 0.0).is_err());
        assert!(GaussianPrior::isotropic(1, 0.0).is_err());
    }

    #[test]
    fn indefinite_prior_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = GaussianPrior::new(DVector::zeros(2), cov).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite(_)));
    }
}
