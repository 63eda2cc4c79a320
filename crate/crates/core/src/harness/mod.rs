//! Monte-Carlo experiment runner behind the `cpbma` command line.
//!
//! Trials are independent and run on a dedicated worker pool; their losses
//! are merged in trial order, so output is identical for any thread count.

mod checks;
mod config;
mod sweep;
mod table;

pub use checks::{run_checks, CheckResult};
pub use config::{parse_marginal_mode, ExperimentConfig, Task, Variant};
pub use sweep::{construction_sweep, SweepRow, SweepTable};
pub use table::{aggregate_losses, aggregate_mse, write_outputs, MseRow, MseTable, CSV_HEADER};

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::baselines::{
    explicit_bma_predict, lds_oracle_predict, oracle_ridge_predict, transfer_ridge_predict, TransferLink,
};
use crate::bayes_linear::PrefixSums;
use crate::changepoint_bma::{predict_regression, LdsBmaEngine};
use crate::simulators::{
    gen_lds_trajectory_indexed, gen_regression_trajectory_indexed, Trajectory, TrajectoryKind,
};
use crate::{Error, Result};

/// Runs `job` on a pool with the configured number of workers.
pub fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// The `index`-th test trajectory of an experiment.
pub fn test_trajectory(cfg: &ExperimentConfig, index: u64) -> Result<Trajectory> {
    match cfg.task {
        Task::Regression => gen_regression_trajectory_indexed(&cfg.regression_config(), cfg.seed, index),
        Task::Lds => gen_lds_trajectory_indexed(&cfg.lds_config(), cfg.seed, index),
    }
}

/// Per-step losses of one variant on one trajectory: squared error for
/// regression, squared error averaged over coordinates for LDS states.
pub fn variant_losses(cfg: &ExperimentConfig, variant: Variant, traj: &Trajectory) -> Result<Vec<f64>> {
    let params = cfg.bma_params();
    let n1 = traj.true_cp;
    match (&traj.kind, variant) {
        (TrajectoryKind::Regression { xs, ys, .. }, _) => {
            let preds: Vec<f64> = match variant {
                Variant::NoInfo | Variant::SupportKnown | Variant::KnownInAdvance | Variant::KnownAfterward => {
                    let info = cfg.info_level(variant).expect("information-level variant");
                    predict_regression(traj, info, params)?
                }
                Variant::OracleRidge | Variant::TransferRidge => {
                    let prefix = PrefixSums::from_samples(traj.dim(), xs, ys)?;
                    let link = TransferLink::anticorrelated(cfg.epsilon.unwrap_or(0.0));
                    (1..=xs.len())
                        .map(|t| match variant {
                            Variant::OracleRidge => {
                                oracle_ridge_predict(&prefix, n1, t, &xs[t - 1], params.lambda, params.noise_var)
                            }
                            _ => transfer_ridge_predict(
                                &prefix,
                                n1,
                                t,
                                &xs[t - 1],
                                params.lambda,
                                params.noise_var,
                                link,
                            ),
                        })
                        .collect::<Result<_>>()?
                }
                Variant::Bma => (1..=xs.len())
                    .map(|t| explicit_bma_predict(xs, ys, cfg.support, t, &params))
                    .collect::<Result<_>>()?,
                other => return Err(Error::Config(format!("variant {other} does not apply to regression"))),
            };
            Ok(preds.iter().zip(ys).map(|(p, y)| (p - y).powi(2)).collect())
        }
        (TrajectoryKind::Lds { states, .. }, Variant::LdsOracle) => {
            let mut out = Vec::with_capacity(states.len());
            for t in 1..=states.len() {
                let pred = if t == 1 {
                    DVector::zeros(traj.dim())
                } else {
                    lds_oracle_predict(&states[..t - 1], n1, cfg.row_prior_var, params.noise_var)?
                };
                out.push(state_loss(&pred, &states[t - 1]));
            }
            Ok(out)
        }
        (TrajectoryKind::Lds { states, .. }, Variant::LdsCpa) => {
            let mut engine = LdsBmaEngine::new(traj.dim(), cfg.support, cfg.row_prior_var, params.noise_var)?;
            let mut out = Vec::with_capacity(states.len());
            for x in states {
                let (pred, _) = engine.predict()?;
                out.push(state_loss(&pred, x));
                engine.observe(x)?;
            }
            Ok(out)
        }
        (_, other) => Err(Error::Config(format!("variant {other} does not apply to LDS trajectories"))),
    }
}

fn state_loss(pred: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (pred - truth).norm_squared() / truth.len() as f64
}

fn evaluated_variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    cfg.variants
        .iter()
        .copied()
        .filter(|v| *v != Variant::ConstructionSweep)
        .collect()
}

/// Per-step MSE of every configured variant over `cfg.trials` trajectories
/// with the change point fixed at `cfg.test_cp`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MseTable> {
    cfg.validate()?;
    let variants = evaluated_variants(cfg);
    if variants.is_empty() {
        return Err(Error::Config("no variants to evaluate".into()));
    }
    let per_trial: Vec<Vec<Vec<f64>>> = with_pool(cfg.threads, || {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|i| {
                let traj = test_trajectory(cfg, i)?;
                variants.iter().map(|v| variant_losses(cfg, *v, &traj)).collect()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut table = MseTable::default();
    for (vi, v) in variants.iter().enumerate() {
        let losses: Vec<Vec<f64>> = per_trial.iter().map(|trial| trial[vi].clone()).collect();
        table.extend(aggregate_losses(v.name(), &losses)?);
    }
    Ok(table)
}

/// Writes `cfg.trials` trajectories as `traj_<i>.csv` plus a JSON sidecar.
pub fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for i in 0..cfg.trials as u64 {
        let traj = test_trajectory(cfg, i)?;
        let csv = dir.join(format!("traj_{i}.csv"));
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        std::fs::write(&csv, buf)?;
        let meta = dir.join(format!("traj_{i}.json"));
        let json = serde_json::to_string_pretty(&traj.meta()).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&meta, json + "\n")?;
        written.push(csv);
        written.push(meta);
    }
    Ok(written)
}
