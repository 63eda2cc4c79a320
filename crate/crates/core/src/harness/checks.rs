//! Quick versions of the library's invariants, run by `cpbma check`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_experiment, ExperimentConfig, Task, Variant};
use crate::baselines::{explicit_bma_predict, lds_matrix_ridge, oracle_ridge_predict};
use crate::bayes_linear::{log_marginal, log_marginal_direct, PrefixSums, SuffStats};
use crate::changepoint_bma::{BmaEngine, BmaParams, InfoLevel, TransitionSums};
use crate::math::softmax;
use crate::simulators::{
    gen_lds_trajectory_indexed, gen_regression_trajectory_indexed, CpSupport, LdsConfig, RegressionConfig,
    TrajectoryKind,
};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn regression(seed: u64, index: u64, dim: usize, cp: CpSupport) -> (usize, Vec<DVector<f64>>, Vec<f64>) {
    let cfg = RegressionConfig {
        cp_support: cp,
        ..RegressionConfig::standard(dim)
    };
    let traj = gen_regression_trajectory_indexed(&cfg, seed, index).expect("valid generator config");
    match traj.kind {
        TrajectoryKind::Regression { xs, ys, .. } => (traj.true_cp, xs, ys),
        _ => unreachable!(),
    }
}

fn log_marginal_oracle(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.random_range(0..=12);
        let d = rng.random_range(1..=4);
        let lambda = rng.random_range(0.1..5.0);
        let s2 = rng.random_range(0.05..3.0);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let xs: Vec<DVector<f64>> = (0..n).map(|i| x.row(i).transpose()).collect();
        let stats = SuffStats::from_samples(d, &xs, y.as_slice())?;
        let diff = (log_marginal(&stats, lambda, s2)? - log_marginal_direct(&x, &y, lambda, s2)?).abs();
        worst = worst.max(diff);
    }
    Ok(check("log_marginal_oracle", worst <= 1e-8, format!("max |Δ| = {worst:e}")))
}

fn known_change_point_collapse(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let params = BmaParams::new(1.0, 0.01);
    for i in 0..100 {
        let (n1, xs, ys) = regression(seed, i, 5, CpSupport::new(10, 20));
        let prefix = PrefixSums::from_samples(5, &xs, &ys)?;
        let mut engine = BmaEngine::new(5, 30, InfoLevel::KnownInAdvance(n1), params)?;
        for t in 1..=30 {
            let pred = engine.step(&xs[t - 1], Some(ys[t - 1]))?.prediction;
            if t > n1 {
                let oracle = oracle_ridge_predict(&prefix, n1, t, &xs[t - 1], 1.0, 0.01)?;
                worst = worst.max((pred - oracle).abs());
            }
        }
    }
    Ok(check("known_change_point_collapse", worst <= 1e-10, format!("max |Δ| = {worst:e}")))
}

fn weight_normalisation(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let (_, xs, ys) = regression(seed, i, 3, CpSupport::new(10, 20));
        for info in [InfoLevel::NoInfo, InfoLevel::SupportKnown { low: 10, high: 20 }, InfoLevel::KnownAfterward(12)] {
            let mut engine = BmaEngine::new(3, 30, info, BmaParams::new(1.0, 0.01))?;
            for (x, y) in xs.iter().zip(&ys) {
                let out = engine.step(x, Some(*y))?;
                let w = out.bank.weights();
                if w.iter().any(|v| *v < 0.0) {
                    worst = f64::INFINITY;
                }
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    Ok(check("weight_normalisation", worst <= 1e-12, format!("max |Σα − 1| = {worst:e}")))
}

fn softmax_lipschitz(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let r = rng.random_range(1..=30);
        let a: Vec<f64> = (0..r).map(|_| rng.random_range(-50.0..50.0)).collect();
        let b: Vec<f64> = (0..r).map(|_| rng.random_range(-50.0..50.0)).collect();
        let (sa, sb) = (softmax(&a).expect("finite"), softmax(&b).expect("finite"));
        let l1: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        let linf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(l1 - 2.0 * linf);
    }
    Ok(check("softmax_lipschitz", worst <= 0.0, format!("max ‖Δα‖₁ − 2‖Δℓ‖∞ = {worst:e}")))
}

fn causality_replay(seed: u64) -> Result<CheckResult> {
    let mut ok = true;
    for i in 0..10 {
        let (_, xs, ys) = regression(seed, i, 3, CpSupport::new(10, 20));
        let info = InfoLevel::SupportKnown { low: 10, high: 20 };
        let mut full = BmaEngine::new(3, 30, info, BmaParams::new(1.0, 0.01))?;
        let full_preds: Vec<f64> = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| full.step(x, Some(*y)).map(|o| o.prediction))
            .collect::<Result<_>>()?;
        for cut in [5, 13, 22] {
            let mut e = BmaEngine::new(3, 30, info, BmaParams::new(1.0, 0.01))?;
            for t in 1..=cut {
                let y = (t < cut).then(|| ys[t - 1]);
                let out = e.step(&xs[t - 1], y)?;
                ok &= out.prediction.to_bits() == full_preds[t - 1].to_bits();
            }
        }
    }
    Ok(check("causality_replay", ok, "prefix replays reproduce past predictions bit for bit".into()))
}

fn construction_convergence(seed: u64) -> Result<CheckResult> {
    let cfg = ExperimentConfig {
        seed,
        trials: 10,
        ..ExperimentConfig::sweep()
    };
    let table = super::construction_sweep(&cfg, &[5.0, 10.0, 20.0, 40.0])?;
    let last = table.rows.last().map_or(f64::INFINITY, |r| r.median_gap);
    let violations: usize = table.rows.iter().map(|r| r.bound_violations).sum();
    Ok(check(
        "construction_convergence",
        table.monotone && last <= 1e-6 && violations == 0,
        format!("median gap at C=40 {last:e}, monotone {}, bound violations {violations}", table.monotone),
    ))
}

fn row_vs_matrix_ridge(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let traj = gen_lds_trajectory_indexed(&LdsConfig::standard(3), seed, i)?;
        let TrajectoryKind::Lds { states, .. } = &traj.kind else { unreachable!() };
        let sums = TransitionSums::from_states(states)?;
        for (lo, hi) in [(0, 40), (17, 40), (0, 17)] {
            let rows = sums.ridge(lo, hi, 1.0 / 3.0, 0.01)?.a_hat;
            let mat = lds_matrix_ridge(states, lo, hi, 1.0 / 3.0, 0.01)?;
            worst = worst.max((rows - mat).abs().max());
        }
    }
    Ok(check("row_vs_matrix_ridge", worst <= 1e-10, format!("max |Δ| = {worst:e}")))
}

fn explicit_bma_agreement(seed: u64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let params = BmaParams::new(1.0, 0.01);
    let support = CpSupport::new(10, 20);
    for i in 0..20 {
        let (_, xs, ys) = regression(seed, i, 3, support);
        let mut e = BmaEngine::new(3, 30, InfoLevel::SupportKnown { low: 10, high: 20 }, params)?;
        for t in 1..=30 {
            let a = e.step(&xs[t - 1], Some(ys[t - 1]))?.prediction;
            let b = explicit_bma_predict(&xs, &ys, support, t, &params)?;
            worst = worst.max((a - b).abs());
        }
    }
    Ok(check("explicit_bma_agreement", worst <= 1e-9, format!("max |Δ| = {worst:e}")))
}

fn thread_determinism(seed: u64) -> Result<CheckResult> {
    let base = ExperimentConfig {
        seed,
        trials: 50,
        variants: vec![Variant::SupportKnown, Variant::OracleRidge],
        ..ExperimentConfig::for_task(Task::Regression)
    };
    let csv = |threads| -> Result<Vec<u8>> {
        let cfg = ExperimentConfig {
            threads: Some(threads),
            ..base.clone()
        };
        let mut buf = Vec::new();
        run_experiment(&cfg)?.write_csv(&mut buf)?;
        Ok(buf)
    };
    let same = csv(1)? == csv(8)?;
    Ok(check("thread_determinism", same, "CSV identical for 1 and 8 workers".into()))
}

/// Runs every check; an `Err` means a check could not be evaluated at all.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        log_marginal_oracle(seed)?,
        known_change_point_collapse(seed)?,
        weight_normalisation(seed)?,
        softmax_lipschitz(seed)?,
        causality_replay(seed)?,
        construction_convergence(seed)?,
        row_vs_matrix_ridge(seed)?,
        explicit_bma_agreement(seed)?,
        thread_determinism(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run_checks(3).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
