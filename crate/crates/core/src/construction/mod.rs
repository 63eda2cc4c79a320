//! A four-layer causal transformer whose attention heads assemble the
//! sufficient statistics of every change-point hypothesis.
//!
//! Attention is evaluated with genuine finite-sharpness softmax; the
//! position-wise MLP blocks are replaced by the exact maps they stand in
//! for (index decoding, subtraction, posterior means and evidences). The
//! distance between [`Construction::forward`] and the model-averaged
//! prediction is therefore entirely due to attention leakage, which
//! vanishes as the sharpness `C` grows.

mod bounds;
mod pe;
mod stream;

pub use bounds::ErrorBounds;
pub use pe::{PeScheme, PeTable};
pub use stream::{Layout, ResidualStream};

use nalgebra::DVector;
use serde::Serialize;

use crate::bayes_linear::{log_marginal, predictive_mean, ridge_posterior, GaussianPrior, SuffStats};
use crate::changepoint_bma::{hypotheses, BmaParams, Hypothesis, InfoLevel, MarginalMode};
use crate::math::softmax;
use crate::{Error, Result};

/// Query–key scaling `C` of the retrieval and masking heads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sharpness(f64);

impl Sharpness {
    pub fn new(c: f64) -> Result<Self> {
        if c > 0.0 && c.is_finite() {
            Ok(Self(c))
        } else {
            Err(Error::Config(format!("sharpness must be positive and finite, got {c}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Uniform causal attention: for every position `j` the running mean
/// `S̄_j = (1/j) Σ_{i≤j} S_i^raw`, obtained by a softmax over zero logits.
/// The result is also written into the stream's `S̄` workspace.
pub fn layer1_uniform_head(stream: &mut ResidualStream) -> Vec<DVector<f64>> {
    let layout = stream.layout;
    let raw: Vec<DVector<f64>> = (0..stream.len()).map(|i| stream.raw(i)).collect();
    let mut out = Vec::with_capacity(raw.len());
    for j in 0..raw.len() {
        let weights = softmax(&vec![0.0; j + 1]).expect("finite logits");
        let mut avg = DVector::zeros(layout.raw_width());
        for (w, r) in weights.iter().zip(&raw[..=j]) {
            avg.axpy(*w, r, 1.0);
        }
        stream.set_running_mean(j, &avg);
        out.push(avg);
    }
    out
}

/// `P_j = j · S̄_j`, with `j` decoded from the positional encoding.
pub fn layer1_recover_prefix(mean: &DVector<f64>, pe: &[f64], table: &PeTable) -> Result<DVector<f64>> {
    let j = table.decode(pe)?;
    Ok(mean * j as f64)
}

/// One retrieval head's output and attention pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub target: usize,
    /// Weighted sum of the prefix-sum slots.
    pub value: Vec<f64>,
    /// Attention weights over positions `1..t−1`.
    pub weights: Vec<f64>,
    /// Largest logit among non-target positions.
    pub s_max: f64,
}

impl Retrieval {
    pub fn target_weight(&self) -> f64 {
        self.weights[self.target - 1]
    }

    /// `1 − (t−1) e^{S_max − C}`.
    pub fn lower_bound(&self, c: Sharpness) -> f64 {
        let others = self.weights.len() as f64;
        1.0 - others * (self.s_max - c.value()).exp()
    }
}

/// Head at the prediction position `t` that fetches the prefix sums stored
/// at `target < t`. Logits are `C ⟨φ_q(PE(target)), φ_k(PE(j))⟩` over the
/// context positions `j = 1..t−1`.
pub fn layer2_retrieval_head(
    stream: &ResidualStream,
    target: usize,
    c: Sharpness,
    table: &PeTable,
) -> Result<Retrieval> {
    let t = stream.len();
    if target == 0 || target >= t {
        return Err(Error::InvalidSegment { k: target, t });
    }
    let query = table.retrieval_query(target)?;
    let logits: Vec<f64> = (0..t - 1)
        .map(|i| Ok(c.value() * query.dot(&table.retrieval_key(stream.pe(i))?)))
        .collect::<Result<_>>()?;
    let s_max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target - 1)
        .map(|(_, l)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights = softmax(&logits).ok_or(Error::DegenerateWeights)?;
    let mut value = DVector::zeros(stream.layout.raw_width());
    for (i, w) in weights.iter().enumerate() {
        value.axpy(*w, &stream.prefix(i), 1.0);
    }
    Ok(Retrieval {
        target,
        value: value.as_slice().to_vec(),
        weights,
        s_max,
    })
}

/// Pre- and post-change statistics of one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub hypothesis: Hypothesis,
    pub pre: SuffStats,
    pub post: SuffStats,
}

/// Segment statistics by subtraction: for a split `k`, pre `= P̂_k` and
/// post `= P̂_{t−1} − P̂_k`; the not-yet hypothesis takes `P̂_{t−1}`.
pub fn layer2_segment_mlp(tail: &SuffStats, retrieved: &[(Hypothesis, SuffStats)]) -> Vec<SegmentPair> {
    retrieved
        .iter()
        .map(|(h, p_k)| match h {
            Hypothesis::Split(_) => SegmentPair {
                hypothesis: *h,
                pre: p_k.clone(),
                post: tail.minus(p_k),
            },
            Hypothesis::NotYet => SegmentPair {
                hypothesis: *h,
                pre: SuffStats::zeros(tail.dim()),
                post: tail.clone(),
            },
        })
        .collect()
}

/// Per-hypothesis quantities computed at the prediction token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorHead {
    pub prediction: f64,
    pub log_marginals: Vec<f64>,
    pub means: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Posterior means, evidences, softmax weights with the prior and the
/// weighted prediction, all evaluated exactly.
pub fn layers34_posterior_head(
    segments: &[SegmentPair],
    priors: &[f64],
    x: &DVector<f64>,
    params: &BmaParams,
) -> Result<PosteriorHead> {
    if segments.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if segments.len() != priors.len() {
        return Err(Error::DimensionMismatch {
            expected: segments.len(),
            got: priors.len(),
        });
    }
    let prior = GaussianPrior::isotropic(x.len(), params.lambda)?;
    let mut log_marginals = Vec::with_capacity(segments.len());
    let mut means = Vec::with_capacity(segments.len());
    for s in segments {
        let mut ell = log_marginal(&s.post, params.lambda, params.noise_var)?;
        if params.marginal_mode == MarginalMode::TwoSegment && matches!(s.hypothesis, Hypothesis::Split(_)) {
            ell += log_marginal(&s.pre, params.lambda, params.noise_var)?;
        }
        log_marginals.push(ell);
        means.push(predictive_mean(&ridge_posterior(&s.post, &prior, params.noise_var)?, x)?);
    }
    let weights = crate::changepoint_bma::posterior_weights(&log_marginals, priors)?;
    let prediction = weights.iter().zip(&means).map(|(w, m)| w * m).sum();
    Ok(PosteriorHead {
        prediction,
        log_marginals,
        means,
        weights,
    })
}

/// Single head over the context positions `1..t−1` with bias `+C` for
/// `j > n₁*` and `−C` otherwise, rescaled by the decoded post-change count
/// `t − 1 − n₁*`. The last token of `stream` is the prediction token.
pub fn masked_accumulate(stream: &ResidualStream, n1: usize, c: f64, table: &PeTable) -> Result<SuffStats> {
    let t = stream.len();
    if t < 2 {
        return Ok(SuffStats::zeros(stream.layout.dim));
    }
    let logits: Vec<f64> = (0..t - 1)
        .map(|i| {
            let j = table.decode(stream.pe(i))?;
            Ok(if j > n1 { c } else { -c })
        })
        .collect::<Result<_>>()?;
    let weights = softmax(&logits).ok_or(Error::DegenerateWeights)?;
    let mut avg = DVector::zeros(stream.layout.raw_width());
    for (i, w) in weights.iter().enumerate() {
        avg.axpy(*w, &stream.raw(i), 1.0);
    }
    let count = (t - 1).saturating_sub(n1);
    Ok(stream.layout.unpack(&(avg * count as f64), count))
}

/// Which mechanism produced a head's output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HeadKind {
    Uniform,
    Retrieval(Retrieval),
    Mask { n1: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardTrace {
    pub heads: Vec<HeadKind>,
    pub running_means: Vec<Vec<f64>>,
    pub prefix_sums: Vec<Vec<f64>>,
    pub posterior: PosteriorHead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub prediction: f64,
    pub head_count: usize,
    pub retrievals: Vec<Retrieval>,
    pub segments: Vec<SegmentPair>,
    pub trace: Option<ForwardTrace>,
}

/// Configured construction for prompts of length up to `len`.
#[derive(Debug, Clone)]
pub struct Construction {
    pub sharpness: Sharpness,
    pub params: BmaParams,
    pub len: usize,
    /// Cap on the number of retrieval heads instantiated at one position.
    pub max_heads: usize,
    pub table: PeTable,
    pub record_trace: bool,
}

impl Construction {
    pub fn new(pe: PeScheme, sharpness: Sharpness, params: BmaParams, len: usize) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            sharpness,
            params,
            len,
            max_heads: 64,
            table: PeTable::new(pe, len)?,
            record_trace: false,
        })
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    pub fn embed(&self, xs: &[DVector<f64>], ys: &[f64]) -> Result<ResidualStream> {
        ResidualStream::embed(xs, ys, &self.table)
    }

    /// Prediction for `y_t` from the prompt `(x_i, y_i)_{i<t}` and `x_t`.
    ///
    /// General information levels use one uniform head plus one retrieval
    /// head per split candidate and one for `P_{t−1}`. A change point known
    /// in advance needs only the uniform head and a single masking head:
    /// `P_{t−1}` is read off the residual as `P_t − S_t^raw`.
    pub fn forward(
        &self,
        xs: &[DVector<f64>],
        ys: &[f64],
        x_t: &DVector<f64>,
        info: InfoLevel,
    ) -> Result<ForwardOutput> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        let t = xs.len() + 1;
        if t > self.len {
            return Err(Error::PastHorizon(self.len));
        }
        if self.table.scheme() == PeScheme::None {
            return Err(Error::Config(
                "the construction needs positional encodings to recover prefix sums".into(),
            ));
        }
        let mut tokens_x = xs.to_vec();
        tokens_x.push(x_t.clone());
        let mut tokens_y = ys.to_vec();
        tokens_y.push(0.0);
        let mut stream = self.embed(&tokens_x, &tokens_y)?;
        let d = stream.layout.dim;

        // layer 1
        let means = layer1_uniform_head(&mut stream);
        for (i, m) in means.iter().enumerate() {
            let p = layer1_recover_prefix(m, stream.pe(i), &self.table)?;
            stream.set_prefix(i, &p);
        }
        let mut heads = vec![HeadKind::Uniform];

        let hyps = hypotheses(info, t, self.len)?;
        let layout = stream.layout;
        // P_{t−1} from the prediction token's own residual
        let residual_tail = || layout.unpack(&(stream.prefix(t - 1) - stream.raw(t - 1)), t - 1);

        let mut retrievals = Vec::new();
        let segments = if let InfoLevel::KnownInAdvance(n1) = info {
            heads.push(HeadKind::Mask { n1 });
            let tail = residual_tail();
            let post = masked_accumulate(&stream, n1, self.sharpness.value(), &self.table)?;
            hyps.iter()
                .map(|(h, _)| match h {
                    Hypothesis::Split(_) => SegmentPair {
                        hypothesis: *h,
                        pre: tail.minus(&post),
                        post: post.clone(),
                    },
                    Hypothesis::NotYet => SegmentPair {
                        hypothesis: *h,
                        pre: SuffStats::zeros(d),
                        post: tail.clone(),
                    },
                })
                .collect()
        } else {
            let splits = hyps.iter().filter(|(h, _)| matches!(h, Hypothesis::Split(_))).count();
            if splits + 1 > self.max_heads {
                return Err(Error::Config(format!(
                    "{} retrieval heads exceed the cap of {}",
                    splits + 1,
                    self.max_heads
                )));
            }
            let tail = if t >= 2 {
                let r = layer2_retrieval_head(&stream, t - 1, self.sharpness, &self.table)?;
                let stats = layout.unpack(&DVector::from_column_slice(&r.value), t - 1);
                retrievals.push(r);
                stats
            } else {
                SuffStats::zeros(d)
            };
            let mut fetched = Vec::with_capacity(hyps.len());
            for (h, _) in &hyps {
                match h {
                    Hypothesis::Split(k) => {
                        let r = layer2_retrieval_head(&stream, *k, self.sharpness, &self.table)?;
                        fetched.push((*h, layout.unpack(&DVector::from_column_slice(&r.value), *k)));
                        retrievals.push(r);
                    }
                    Hypothesis::NotYet => fetched.push((*h, SuffStats::zeros(d))),
                }
            }
            heads.extend(retrievals.iter().cloned().map(HeadKind::Retrieval));
            layer2_segment_mlp(&tail, &fetched)
        };

        let priors: Vec<f64> = hyps.iter().map(|(_, p)| *p).collect();
        let posterior = layers34_posterior_head(&segments, &priors, x_t, &self.params)?;
        let head_count = heads.len();
        let trace = self.record_trace.then(|| ForwardTrace {
            heads,
            running_means: means.iter().map(|m| m.as_slice().to_vec()).collect(),
            prefix_sums: (0..t).map(|i| stream.prefix(i).as_slice().to_vec()).collect(),
            posterior: posterior.clone(),
        });
        Ok(ForwardOutput {
            prediction: posterior.prediction,
            head_count,
            retrievals,
            segments,
            trace,
        })
    }
}

/// Largest deviation between assembled and exact segment statistics.
pub fn segment_error(assembled: &SuffStats, exact: &SuffStats) -> f64 {
    let a = (&assembled.gram - &exact.gram).norm();
    let b = (&assembled.xy - &exact.xy).norm();
    let c = (assembled.yy - exact.yy).abs();
    a.max(b).max(c)
}

#[cfg(test)]
mod tests;
