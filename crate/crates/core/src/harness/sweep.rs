use std::io::Write;

use rayon::prelude::*;

use super::{with_pool, ExperimentConfig};
use crate::bayes_linear::PrefixSums;
use crate::changepoint_bma::{bma_predict, build_bank, InfoLevel};
use crate::construction::{Construction, PeScheme, Sharpness};
use crate::math::{format_real, median};
use crate::simulators::{gen_regression_trajectory_indexed, TrajectoryKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub c: f64,
    pub median_gap: f64,
    pub max_gap: f64,
    /// Retrieval heads whose target weight fell below the leakage bound.
    pub bound_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Whether the median gap is nonincreasing along the sharpness list.
    pub monotone: bool,
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "c,median_gap,max_gap,bound_violations")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                format_real(r.c),
                format_real(r.median_gap),
                format_real(r.max_gap),
                r.bound_violations
            )?;
        }
        Ok(())
    }
}

struct PromptResult {
    gap: f64,
    violations: usize,
}

fn prompt_gap(model: &Construction, info: InfoLevel, cfg: &ExperimentConfig, index: u64) -> Result<PromptResult> {
    let mut gen = cfg.regression_config();
    gen.cp_support = cfg.support;
    let traj = gen_regression_trajectory_indexed(&gen, cfg.seed, index)?;
    let TrajectoryKind::Regression { xs, ys, .. } = &traj.kind else {
        unreachable!("regression generator");
    };
    let prefix = PrefixSums::from_samples(traj.dim(), xs, ys)?;
    let mut gap: f64 = 0.0;
    let mut violations = 0;
    for t in 1..=xs.len() {
        let out = model.forward(&xs[..t - 1], &ys[..t - 1], &xs[t - 1], info)?;
        let bank = build_bank(&prefix, info, t, cfg.len, &model.params)?;
        let exact = bma_predict(&xs[t - 1], &bank, &prefix, t, &model.params)?;
        gap = gap.max((out.prediction - exact).abs());
        violations += out
            .retrievals
            .iter()
            .filter(|r| r.target_weight() < r.lower_bound(model.sharpness))
            .count();
    }
    Ok(PromptResult { gap, violations })
}

/// For each sharpness, the per-prompt gap `max_t |forward − BMA|` over
/// `cfg.trials` random prompts, summarised by its median and maximum.
/// The information level is the first one among `cfg.variants`
/// (support-known by default).
pub fn construction_sweep(cfg: &ExperimentConfig, sharpness: &[f64]) -> Result<SweepTable> {
    cfg.validate()?;
    if cfg.task != super::Task::Regression {
        return Err(Error::Config("the construction sweep runs on regression prompts".into()));
    }
    if sharpness.is_empty() {
        return Err(Error::Config("empty sharpness list".into()));
    }
    let info = cfg
        .variants
        .iter()
        .find_map(|v| cfg.info_level(*v))
        .unwrap_or(InfoLevel::SupportKnown {
            low: cfg.support.low,
            high: cfg.support.high,
        });
    let mut rows = Vec::with_capacity(sharpness.len());
    for &c in sharpness {
        let model = Construction::new(PeScheme::Linear, Sharpness::new(c)?, cfg.bma_params(), cfg.len)?;
        let results = with_pool(cfg.threads, || {
            (0..cfg.trials as u64)
                .into_par_iter()
                .map(|i| prompt_gap(&model, info, cfg, i))
                .collect::<Result<Vec<_>>>()
        })??;
        let gaps: Vec<f64> = results.iter().map(|r| r.gap).collect();
        rows.push(SweepRow {
            c,
            median_gap: median(&gaps),
            max_gap: gaps.iter().copied().fold(0.0, f64::max),
            bound_violations: results.iter().map(|r| r.violations).sum(),
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].median_gap <= w[0].median_gap);
    Ok(SweepTable { rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharper_heads_shrink_the_gap() {
        let cfg = ExperimentConfig {
            trials: 8,
            ..ExperimentConfig::sweep()
        };
        let table = construction_sweep(&cfg, &[5.0, 10.0, 20.0, 40.0]).unwrap();
        assert!(table.monotone);
        assert!(table.rows[3].median_gap <= 1e-6);
        assert!(table.rows.iter().all(|r| r.bound_violations == 0));
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
