//! Reference predictors that are told the true change point, plus a
//! hypothesis-by-hypothesis averaging baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes_linear::{
    log_marginal, predictive_mean, ridge_posterior, GaussianPrior, PrefixSums, SuffStats,
};
use crate::changepoint_bma::{posterior_weights, BmaParams, MarginalMode, TransitionSums};
use crate::simulators::CpSupport;
use crate::{Error, Result};

/// Known relation `w₂ = sign·w₁ + ε η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferLink {
    pub sign: f64,
    pub epsilon: f64,
}

impl TransferLink {
    pub fn anticorrelated(epsilon: f64) -> Self {
        Self { sign: -1.0, epsilon }
    }
}

/// Active range `(lo, hi)` of the oracle at time `t`: the whole prefix
/// before the change, and only post-change samples from `n₁* + 1` on.
fn oracle_range(n1: usize, t: usize) -> (usize, usize) {
    if t <= n1 {
        (0, t - 1)
    } else {
        (n1, t - 1)
    }
}

fn check_time(prefix: &PrefixSums, t: usize) -> Result<()> {
    if t == 0 || t - 1 > prefix.len() {
        return Err(Error::OutOfRange(t));
    }
    Ok(())
}

/// Ridge prediction from the active regime's samples only. At `t = n₁*+1`
/// the post-change segment is empty and the prior mean (zero) is returned.
pub fn oracle_ridge_predict(
    prefix: &PrefixSums,
    n1: usize,
    t: usize,
    x: &DVector<f64>,
    lambda: f64,
    noise_var: f64,
) -> Result<f64> {
    check_time(prefix, t)?;
    let (lo, hi) = oracle_range(n1, t);
    let prior = GaussianPrior::isotropic(prefix.dim(), lambda)?;
    let post = ridge_posterior(&prefix.between(lo, hi)?, &prior, noise_var)?;
    predictive_mean(&post, x)
}

/// Prior for the post-change weights obtained by pushing the pre-change
/// posterior `N(ŵ₁, Σ₁)` through the link: `N(sign·ŵ₁, Σ₁ + ε² I)`.
pub fn transfer_prior(
    pre: &SuffStats,
    lambda: f64,
    noise_var: f64,
    link: TransferLink,
) -> Result<GaussianPrior> {
    if !(link.epsilon >= 0.0) {
        return Err(Error::Config(format!("ε must be nonnegative, got {}", link.epsilon)));
    }
    let d = pre.dim();
    let post = ridge_posterior(pre, &GaussianPrior::isotropic(d, lambda)?, noise_var)?;
    let cov = post.covariance() + DMatrix::identity(d, d) * link.epsilon.powi(2);
    GaussianPrior::new(post.mean * link.sign, cov)
}

/// Oracle ridge before the change; afterwards ridge on the post-change
/// segment under the propagated [`transfer_prior`].
pub fn transfer_ridge_predict(
    prefix: &PrefixSums,
    n1: usize,
    t: usize,
    x: &DVector<f64>,
    lambda: f64,
    noise_var: f64,
    link: TransferLink,
) -> Result<f64> {
    check_time(prefix, t)?;
    if t <= n1 {
        return oracle_ridge_predict(prefix, n1, t, x, lambda, noise_var);
    }
    let prior = transfer_prior(&prefix.between(0, n1)?, lambda, noise_var, link)?;
    let post = ridge_posterior(&prefix.between(n1, t - 1)?, &prior, noise_var)?;
    predictive_mean(&post, x)
}

/// Predicts `x_{t+1}` from `states = x_1..x_t` using transitions of the
/// active regime only; `x_{t+1}` belongs to the second regime when
/// `t + 1 > n₁*`.
pub fn lds_oracle_predict(
    states: &[DVector<f64>],
    n1: usize,
    row_prior_var: f64,
    noise_var: f64,
) -> Result<DVector<f64>> {
    let Some(last) = states.last() else {
        return Err(Error::OutOfRange(0));
    };
    let sums = TransitionSums::from_states(states)?;
    let next = states.len() + 1;
    let (lo, hi) = oracle_range(n1, next);
    Ok(sums.ridge(lo, hi, row_prior_var, noise_var)?.predict(last))
}

/// Matrix-form ridge over the transitions into states `lo+1 ..= hi`:
/// `Â = Y Xᵀ (X Xᵀ + σ² τ⁻² I)⁻¹`, solved by LU.
pub fn lds_matrix_ridge(
    states: &[DVector<f64>],
    lo: usize,
    hi: usize,
    row_prior_var: f64,
    noise_var: f64,
) -> Result<DMatrix<f64>> {
    let d = states.first().map_or(0, |s| s.len());
    if hi > states.len() || lo > hi {
        return Err(Error::InvalidSegment { k: lo, t: hi + 1 });
    }
    // states are 1-based; the first state has no incoming transition
    let targets: Vec<usize> = ((lo + 1).max(2)..=hi).collect();
    let x = DMatrix::from_fn(d, targets.len(), |r, c| states[targets[c] - 2][r]);
    let y = DMatrix::from_fn(d, targets.len(), |r, c| states[targets[c] - 1][r]);
    let gram = &x * x.transpose() + DMatrix::identity(d, d) * (noise_var / row_prior_var);
    let rhs = (&y * x.transpose()).transpose();
    let sol = gram
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotPositiveDefinite("regularised transition Gram"))?;
    Ok(sol.transpose())
}

/// Averaging over every change point in `support` as a separate hypothesis
/// with prior `1/|support|`, recomputing each segment from the raw samples.
/// Candidates not yet reached explain the prefix with a single regime.
pub fn explicit_bma_predict(
    xs: &[DVector<f64>],
    ys: &[f64],
    support: CpSupport,
    t: usize,
    params: &BmaParams,
) -> Result<f64> {
    if t == 0 || t > xs.len() || xs.len() != ys.len() {
        return Err(Error::OutOfRange(t));
    }
    let d = xs[t - 1].len();
    let seg = |lo: usize, hi: usize| SuffStats::from_samples(d, &xs[lo..hi], &ys[lo..hi]);
    let prior = GaussianPrior::isotropic(d, params.lambda)?;
    let mut log_ml = Vec::with_capacity(support.size());
    let mut means = Vec::with_capacity(support.size());
    for k in support.low..=support.high {
        let (ell, active) = if k >= t {
            let full = seg(0, t - 1)?;
            (log_marginal(&full, params.lambda, params.noise_var)?, full)
        } else {
            let post = seg(k, t - 1)?;
            let mut ell = log_marginal(&post, params.lambda, params.noise_var)?;
            if params.marginal_mode == MarginalMode::TwoSegment {
                ell += log_marginal(&seg(0, k)?, params.lambda, params.noise_var)?;
            }
            (ell, post)
        };
        log_ml.push(ell);
        let post = ridge_posterior(&active, &prior, params.noise_var)?;
        means.push(predictive_mean(&post, &xs[t - 1])?);
    }
    let uniform = vec![1.0 / support.size() as f64; support.size()];
    let weights = posterior_weights(&log_ml, &uniform)?;
    Ok(weights.iter().zip(&means).map(|(w, m)| w * m).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{
        gen_lds_trajectory_indexed, gen_regression_trajectory_indexed, LdsConfig, RegressionConfig,
        TaskLink, TrajectoryKind,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_prefix(pairs: &[(f64, f64)]) -> PrefixSums {
        let xs: Vec<_> = pairs.iter().map(|p| DVector::from_element(1, p.0)).collect();
        let ys: Vec<_> = pairs.iter().map(|p| p.1).collect();
        PrefixSums::from_samples(1, &xs, &ys).unwrap()
    }

    #[test]
    fn oracle_predicts_prior_at_the_transition() {
        let p = scalar_prefix(&[(1.0, 2.0), (0.5, 1.0), (-1.0, 0.3)]);
        for x in [-3.0, 0.0, 7.0] {
            let v = oracle_ridge_predict(&p, 3, 4, &DVector::from_element(1, x), 1.0, 1.0).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn oracle_without_change_uses_full_prefix() {
        // one sample (x=1, y=1), λ=σ²=1: μ = 1/2
        let p = scalar_prefix(&[(1.0, 1.0)]);
        let x = DVector::from_element(1, 2.0);
        let v = oracle_ridge_predict(&p, 50, 2, &x, 1.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // two samples at x=1 with y=1: μ = 2/3
        let p = scalar_prefix(&[(1.0, 1.0), (1.0, 1.0)]);
        let v = oracle_ridge_predict(&p, 50, 3, &DVector::from_element(1, 1.0), 1.0, 1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn transfer_matches_oracle_before_the_change() {
        let mut cfg = RegressionConfig::standard(3);
        cfg.task_link = TaskLink::Anticorrelated { epsilon: 0.1 };
        let traj = gen_regression_trajectory_indexed(&cfg, 5, 0).unwrap();
        let TrajectoryKind::Regression { xs, ys, .. } = &traj.kind else { unreachable!() };
        let p = PrefixSums::from_samples(3, xs, ys).unwrap();
        let n1 = traj.true_cp;
        for t in 1..=n1 {
            let a = oracle_ridge_predict(&p, n1, t, &xs[t - 1], 1.0, 0.01).unwrap();
            let b = transfer_ridge_predict(&p, n1, t, &xs[t - 1], 1.0, 0.01, TransferLink::anticorrelated(0.1))
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn transfer_prior_mean_without_post_samples() {
        // find one pre-change sample giving ŵ₁ = 2 and Σ₁ = 0.1 in d = 1:
        // Σ₁ = 1/(λ + x²/σ²), ŵ₁ = Σ₁ x y / σ²
        let (lambda, s2, x) = (1.0, 1.0, 3.0f64);
        let sigma1 = 1.0 / (lambda + x * x / s2);
        assert!((sigma1 - 0.1).abs() < 1e-15);
        let y = 2.0 * s2 / (sigma1 * x);
        let p = scalar_prefix(&[(x, y)]);
        let prior = transfer_prior(p.at(1).unwrap(), lambda, s2, TransferLink::anticorrelated(0.1)).unwrap();
        assert!((prior.mean[0] + 2.0).abs() < 1e-12);
        assert!((prior.cov[(0, 0)] - 0.11).abs() < 1e-12);
        let v = transfer_ridge_predict(&p, 1, 2, &DVector::from_element(1, 1.0), lambda, s2, TransferLink::anticorrelated(0.1))
            .unwrap();
        assert!((v + 2.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_transfer_recovers_negated_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w1 = DVector::from_vec(vec![0.7, -1.2, 0.4]);
        let xs: Vec<_> = (0..400)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| w1.dot(x)).collect();
        ys.push(0.0);
        let mut xs = xs;
        let probe = DVector::from_vec(vec![0.3, 0.9, -0.5]);
        xs.push(probe.clone());
        let p = PrefixSums::from_samples(3, &xs, &ys).unwrap();
        // Σ₁ ≈ σ² (Σ x xᵀ)⁻¹ vanishes with σ²; the prior mean dominates
        let v = transfer_ridge_predict(&p, 400, 401, &probe, 1.0, 1e-10, TransferLink::anticorrelated(0.0))
            .unwrap();
        assert!((v + w1.dot(&probe)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn wide_transfer_prior_approaches_oracle_on_rich_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w1 = DVector::from_vec(vec![1.0, -0.5]);
        let w2 = DVector::from_vec(vec![0.3, 0.8]);
        let n1 = 50;
        let xs: Vec<_> = (0..1050)
            .map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| if i < n1 { w1.dot(x) } else { w2.dot(x) } + 0.1 * rng.random_range(-1.0..1.0))
            .collect();
        let p = PrefixSums::from_samples(2, &xs, &ys).unwrap();
        let t = 1050;
        let x = &xs[t - 1];
        let oracle = oracle_ridge_predict(&p, n1, t, x, 1.0, 0.01).unwrap();
        let wide = transfer_ridge_predict(&p, n1, t, x, 1.0, 0.01, TransferLink::anticorrelated(1e3)).unwrap();
        assert!(((wide - oracle) / oracle).abs() < 1e-3, "{wide} vs {oracle}");
    }

    #[test]
    fn wide_transfer_prior_matches_oracle_risk() {
        let mut cfg = RegressionConfig::standard(3);
        cfg.cp_support = CpSupport::singleton(12);
        cfg.task_link = TaskLink::Anticorrelated { epsilon: 0.1 };
        let (mut se_o, mut se_w) = (0.0, 0.0);
        let t = 30;
        for i in 0..2000 {
            let traj = gen_regression_trajectory_indexed(&cfg, 77, i).unwrap();
            let TrajectoryKind::Regression { xs, ys, .. } = &traj.kind else { unreachable!() };
            let p = PrefixSums::from_samples(3, xs, ys).unwrap();
            let o = oracle_ridge_predict(&p, 12, t, &xs[t - 1], 1.0, 0.01).unwrap();
            let w = transfer_ridge_predict(&p, 12, t, &xs[t - 1], 1.0, 0.01, TransferLink::anticorrelated(100.0))
                .unwrap();
            se_o += (o - ys[t - 1]).powi(2);
            se_w += (w - ys[t - 1]).powi(2);
        }
        assert!(((se_w - se_o) / se_o).abs() < 0.01, "{se_w} vs {se_o}");
    }

    #[test]
    fn scalar_lds_oracle() {
        // τ² = σ² = 1, transition 1 → 0.5: Â = 0.5 / (1 + 1)
        let states = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.5)];
        let p = lds_oracle_predict(&states, 10, 1.0, 1.0).unwrap();
        assert!((p[0] - 0.25 * 0.5).abs() < 1e-15);
        let p = lds_oracle_predict(&states[..1], 10, 1.0, 1.0).unwrap();
        assert_eq!(p[0], 0.0);
        // predicting the first post-change state uses no transitions
        let p = lds_oracle_predict(&states, 2, 1.0, 1.0).unwrap();
        assert_eq!(p[0], 0.0);
    }

    fn lds_states(seed: u64, index: u64) -> Vec<DVector<f64>> {
        let cfg = LdsConfig::standard(3);
        match gen_lds_trajectory_indexed(&cfg, seed, index).unwrap().kind {
            TrajectoryKind::Lds { states, .. } => states,
            _ => unreachable!(),
        }
    }

    #[test]
    fn row_wise_equals_matrix_form() {
        for i in 0..20 {
            let states = lds_states(3, i);
            let sums = TransitionSums::from_states(&states).unwrap();
            for (lo, hi) in [(0, 40), (0, 10), (17, 40), (5, 6), (39, 40)] {
                let rows = sums.ridge(lo, hi, 1.0 / 3.0, 0.01).unwrap().a_hat;
                let mat = lds_matrix_ridge(&states, lo, hi, 1.0 / 3.0, 0.01).unwrap();
                assert!((rows - mat).abs().max() < 1e-10);
            }
        }
    }

    #[test]
    fn lds_oracle_is_rotation_equivariant() {
        let states = lds_states(8, 0);
        let q = DMatrix::from_fn(3, 3, |i, j| ((i * 3 + j) as f64).sin()).qr().q();
        let rotated: Vec<_> = states.iter().map(|s| &q * s).collect();
        for t in [1, 5, 17, 18, 30] {
            let a = lds_oracle_predict(&states[..t], 17, 1.0 / 3.0, 0.01).unwrap();
            let b = lds_oracle_predict(&rotated[..t], 17, 1.0 / 3.0, 0.01).unwrap();
            assert!((&q * a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn oracle_beats_unsegmented_ridge_on_average() {
        let mut cfg = RegressionConfig::standard(3);
        cfg.cp_support = CpSupport::singleton(12);
        let (mut oracle, mut pooled) = (0.0, 0.0);
        for i in 0..5000 {
            let traj = gen_regression_trajectory_indexed(&cfg, 21, i).unwrap();
            let TrajectoryKind::Regression { xs, ys, .. } = &traj.kind else { unreachable!() };
            let p = PrefixSums::from_samples(3, xs, ys).unwrap();
            for t in 13..=30 {
                let o = oracle_ridge_predict(&p, 12, t, &xs[t - 1], 1.0, 0.01).unwrap();
                let f = oracle_ridge_predict(&p, 30, t, &xs[t - 1], 1.0, 0.01).unwrap();
                oracle += (o - ys[t - 1]).powi(2);
                pooled += (f - ys[t - 1]).powi(2);
            }
        }
        assert!(oracle <= pooled, "{oracle} > {pooled}");
    }
}
