use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{bma_predict, build_bank, BmaParams, HypothesisBank, InfoLevel, MarginalMode};
use crate::bayes_linear::PrefixSums;
use crate::simulators::{Trajectory, TrajectoryKind};
use crate::{Error, Result};

/// Online BMA predictor for one regression prompt.
#[derive(Debug, Clone)]
pub struct BmaEngine {
    info: InfoLevel,
    len: usize,
    params: BmaParams,
    prefix: PrefixSums,
    t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub t: usize,
    pub prediction: f64,
    pub bank: HypothesisBank,
}

/// Snapshot header, aligned with the trajectory sidecar record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineMeta {
    pub t: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub len: usize,
    pub info: String,
    pub marginal_mode: MarginalMode,
    pub lambda: f64,
    pub noise_var: f64,
}

impl BmaEngine {
    pub fn new(dim: usize, len: usize, info: InfoLevel, params: BmaParams) -> Result<Self> {
        info.validate(len)?;
        params.validate()?;
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(Self {
            info,
            len,
            params,
            prefix: PrefixSums::new(dim),
            t: 1,
        })
    }

    /// Index of the next prediction.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn prefix(&self) -> &PrefixSums {
        &self.prefix
    }

    pub fn meta(&self) -> EngineMeta {
        EngineMeta {
            t: self.t,
            d: self.prefix.dim(),
            len: self.len,
            info: self.info.label(),
            marginal_mode: self.params.marginal_mode,
            lambda: self.params.lambda,
            noise_var: self.params.noise_var,
        }
    }

    /// Predicts `y_t` from `x_t` and the stored prefix, then appends
    /// `(x_t, y_t)` when the label is supplied. The label is never read
    /// before the prediction is formed.
    pub fn step(&mut self, x: &DVector<f64>, y: Option<f64>) -> Result<StepOutput> {
        if self.t > self.len {
            return Err(Error::PastHorizon(self.len));
        }
        if x.len() != self.prefix.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.prefix.dim(),
                got: x.len(),
            });
        }
        let bank = build_bank(&self.prefix, self.info, self.t, self.len, &self.params)?;
        let prediction = bma_predict(x, &bank, &self.prefix, self.t, &self.params)?;
        let out = StepOutput {
            t: self.t,
            prediction,
            bank,
        };
        if let Some(y) = y {
            self.prefix.push(x, y)?;
            self.t += 1;
        }
        Ok(out)
    }
}

/// Runs an engine over a whole regression prompt; entry `t−1` is `ŷ_t`.
pub fn predict_regression(traj: &Trajectory, info: InfoLevel, params: BmaParams) -> Result<Vec<f64>> {
    let TrajectoryKind::Regression { xs, ys, .. } = &traj.kind else {
        return Err(Error::Config("expected a regression trajectory".into()));
    };
    let mut engine = BmaEngine::new(traj.dim(), traj.len(), info, params)?;
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| engine.step(x, Some(y)).map(|o| o.prediction))
        .collect()
}
