//! Sequential Bayesian model averaging over change-point hypotheses.
//!
//! At time `t` each hypothesis names the segment it treats as the active
//! regime. Its weight is proportional to its prior mass times the evidence
//! of `Z_{<t}`, and the prediction is the weight-averaged ridge predictive
//! mean.
//!
//! Candidates `k ≥ t` ("the change has not happened yet") all explain the
//! observed prefix identically, so they are folded into one
//! [`Hypothesis::NotYet`] entry carrying their combined prior mass.

mod engine;
mod lds;

pub use engine::{predict_regression, BmaEngine, EngineMeta, StepOutput};
pub use lds::{LdsBank, LdsBmaEngine, RowRidge, TransitionSums};

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bayes_linear::{
    log_marginal, predictive_mean, ridge_posterior, GaussianPosterior, GaussianPrior, PrefixSums,
    SuffStats,
};
use crate::math::{format_real, softmax};
use crate::simulators::CpSupport;
use crate::{Error, Result};

/// Side information about the change point available to the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoLevel {
    NoInfo,
    SupportKnown { low: usize, high: usize },
    KnownInAdvance(usize),
    /// Uninformed until one step after the change, exact afterwards.
    KnownAfterward(usize),
}

impl InfoLevel {
    pub fn validate(&self, len: usize) -> Result<()> {
        match *self {
            InfoLevel::NoInfo => {
                if len < 2 {
                    return Err(Error::Config(format!("sequence length {len} leaves no change point")));
                }
                Ok(())
            }
            InfoLevel::SupportKnown { low, high } => CpSupport::new(low, high).validate(len),
            InfoLevel::KnownInAdvance(k) | InfoLevel::KnownAfterward(k) => {
                CpSupport::singleton(k).validate(len)
            }
        }
    }

    /// Support of the hypotheses in force at time `t`.
    fn effective_support(&self, t: usize, len: usize) -> CpSupport {
        match *self {
            InfoLevel::NoInfo => CpSupport::new(1, len - 1),
            InfoLevel::SupportKnown { low, high } => CpSupport::new(low, high),
            InfoLevel::KnownInAdvance(k) => CpSupport::singleton(k),
            InfoLevel::KnownAfterward(k) if t > k + 1 => CpSupport::singleton(k),
            InfoLevel::KnownAfterward(_) => CpSupport::new(1, len - 1),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            InfoLevel::NoInfo => "no_info".into(),
            InfoLevel::SupportKnown { low, high } => format!("support_known[{low},{high}]"),
            InfoLevel::KnownInAdvance(k) => format!("known_in_advance[{k}]"),
            InfoLevel::KnownAfterward(k) => format!("known_afterward[{k}]"),
        }
    }
}

/// How a hypothesis' evidence is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MarginalMode {
    /// Evidence of the post-change segment only.
    PostSegmentOnly,
    /// Evidence of the pre-change segment times that of the post-change
    /// segment, each under an independent weight prior.
    #[default]
    TwoSegment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmaParams {
    /// Prior precision λ of each regime's weight vector.
    pub lambda: f64,
    /// Observation noise variance σ².
    pub noise_var: f64,
    pub marginal_mode: MarginalMode,
}

impl BmaParams {
    pub fn new(lambda: f64, noise_var: f64) -> Self {
        Self {
            lambda,
            noise_var,
            marginal_mode: MarginalMode::TwoSegment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.noise_var > 0.0 && self.lambda.is_finite() && self.noise_var.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "λ and σ² must be positive, got λ={}, σ²={}",
                self.lambda, self.noise_var
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// The last pre-change sample is `k`, with `k ≤ t − 1`.
    Split(usize),
    /// The change lies at or after the prediction time.
    NotYet,
}

impl Hypothesis {
    /// `(lo, hi)` such that the active segment is samples `lo+1 ..= hi`.
    pub fn active_range(&self, t: usize) -> (usize, usize) {
        match *self {
            Hypothesis::Split(k) => (k, t - 1),
            Hypothesis::NotYet => (0, t - 1),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Hypothesis::Split(k) => k.to_string(),
            Hypothesis::NotYet => "not_yet".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisEntry {
    pub hypothesis: Hypothesis,
    pub prior: f64,
    pub log_marginal: f64,
    pub weight: f64,
}

/// Weighted hypotheses at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisBank {
    pub t: usize,
    pub entries: Vec<HypothesisEntry>,
}

impl HypothesisBank {
    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn weight_of(&self, h: Hypothesis) -> f64 {
        self.entries
            .iter()
            .find(|e| e.hypothesis == h)
            .map_or(0.0, |e| e.weight)
    }

    /// Most probable hypothesis; the earliest entry wins ties.
    pub fn map_hypothesis(&self) -> Option<Hypothesis> {
        crate::math::argmax(&self.weights()).map(|i| self.entries[i].hypothesis)
    }

    /// Rows `k,log_ml,weight`, one per hypothesis.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,log_ml,weight")?;
        for e in &self.entries {
            writeln!(
                out,
                "{},{},{}",
                e.hypothesis.label(),
                format_real(e.log_marginal),
                format_real(e.weight)
            )?;
        }
        Ok(())
    }
}

/// Candidate change points `K_t` implied by the information level.
pub fn candidate_set(info: InfoLevel, t: usize, len: usize) -> Result<Vec<usize>> {
    if t < 1 || t > len {
        return Err(Error::OutOfRange(t));
    }
    info.validate(len)?;
    Ok(match info {
        InfoLevel::NoInfo => (1..t).collect(),
        InfoLevel::SupportKnown { low, high } => (low..=high.min(t - 1)).collect(),
        InfoLevel::KnownInAdvance(k) => vec![k],
        InfoLevel::KnownAfterward(k) if t > k + 1 => vec![k],
        InfoLevel::KnownAfterward(_) => (1..t).collect(),
    })
}

/// Operational hypotheses at time `t` with their prior masses: every
/// supported split `k ≤ t − 1` at `1/|support|`, plus [`Hypothesis::NotYet`]
/// carrying the mass of the supported `k ≥ t`.
pub fn hypotheses(info: InfoLevel, t: usize, len: usize) -> Result<Vec<(Hypothesis, f64)>> {
    if t < 1 || t > len {
        return Err(Error::OutOfRange(t));
    }
    info.validate(len)?;
    let support = info.effective_support(t, len);
    let mass = 1.0 / support.size() as f64;
    let mut out: Vec<(Hypothesis, f64)> = (support.low..=support.high.min(t - 1))
        .map(|k| (Hypothesis::Split(k), mass))
        .collect();
    if support.high >= t {
        let pending = support.high + 1 - support.low.max(t);
        out.push((Hypothesis::NotYet, pending as f64 * mass));
    }
    Ok(out)
}

/// Active-segment statistics of `h` at time `t`.
pub fn active_stats(prefix: &PrefixSums, h: Hypothesis, t: usize) -> Result<SuffStats> {
    let (lo, hi) = h.active_range(t);
    prefix.between(lo, hi)
}

/// Log-evidence of `Z_{<t}` under `h`.
pub fn hypothesis_logml(prefix: &PrefixSums, h: Hypothesis, t: usize, params: &BmaParams) -> Result<f64> {
    if let Hypothesis::Split(k) = h {
        if k + 1 > t {
            return Err(Error::InvalidSegment { k, t });
        }
    }
    let post = log_marginal(&active_stats(prefix, h, t)?, params.lambda, params.noise_var)?;
    match (h, params.marginal_mode) {
        (Hypothesis::Split(k), MarginalMode::TwoSegment) => {
            let pre = log_marginal(&prefix.between(0, k)?, params.lambda, params.noise_var)?;
            Ok(pre + post)
        }
        _ => Ok(post),
    }
}

/// `α_k ∝ π_k exp(ℓ_k)`, normalised in log space.
pub fn posterior_weights(log_ml: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
    if log_ml.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            expected: prior.len(),
            got: log_ml.len(),
        });
    }
    if log_ml.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let logits: Vec<f64> = log_ml.iter().zip(prior).map(|(l, p)| l + p.ln()).collect();
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::DegenerateWeights);
    }
    softmax(&logits).ok_or(Error::DegenerateWeights)
}

/// Scores every hypothesis in force at time `t`.
pub fn build_bank(
    prefix: &PrefixSums,
    info: InfoLevel,
    t: usize,
    len: usize,
    params: &BmaParams,
) -> Result<HypothesisBank> {
    let hyps = hypotheses(info, t, len)?;
    if prefix.len() + 1 < t {
        return Err(Error::OutOfRange(t - 1));
    }
    let log_ml = hyps
        .iter()
        .map(|(h, _)| hypothesis_logml(prefix, *h, t, params))
        .collect::<Result<Vec<_>>>()?;
    let prior: Vec<f64> = hyps.iter().map(|(_, p)| *p).collect();
    let weights = posterior_weights(&log_ml, &prior)?;
    let entries = hyps
        .into_iter()
        .zip(log_ml)
        .zip(weights)
        .map(|(((hypothesis, prior), log_marginal), weight)| HypothesisEntry {
            hypothesis,
            prior,
            log_marginal,
            weight,
        })
        .collect();
    Ok(HypothesisBank { t, entries })
}

/// Posterior over the active regime's weights under `h`.
pub fn hypothesis_posterior(
    prefix: &PrefixSums,
    h: Hypothesis,
    t: usize,
    params: &BmaParams,
) -> Result<GaussianPosterior> {
    let prior = GaussianPrior::isotropic(prefix.dim(), params.lambda)?;
    ridge_posterior(&active_stats(prefix, h, t)?, &prior, params.noise_var)
}

/// `Σ_k α_k m_k(t)`.
pub fn bma_predict(
    x: &DVector<f64>,
    bank: &HypothesisBank,
    prefix: &PrefixSums,
    t: usize,
    params: &BmaParams,
) -> Result<f64> {
    if bank.entries.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut total = 0.0;
    for e in &bank.entries {
        if e.weight == 0.0 {
            continue;
        }
        let post = hypothesis_posterior(prefix, e.hypothesis, t, params)?;
        total += e.weight * predictive_mean(&post, x)?;
    }
    Ok(total)
}
