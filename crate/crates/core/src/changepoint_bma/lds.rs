//! Change-point averaging for linear dynamical systems. Each row of the
//! transition matrix is an independent ridge regression of one state
//! coordinate on the previous state.

use nalgebra::{DMatrix, DVector};

use crate::bayes_linear::{predictive_variance, ridge_posterior, GaussianPrior, PrefixSums};
use crate::math::softmax;
use crate::simulators::CpSupport;
use crate::{Error, Result};

/// Per-row transition statistics. Position `j` holds the transition
/// `x_{j−1} → x_j`; position 1 carries no sample.
#[derive(Debug, Clone)]
pub struct TransitionSums {
    rows: Vec<PrefixSums>,
    last: Option<DVector<f64>>,
}

/// Row-wise ridge estimate of a transition matrix.
#[derive(Debug, Clone)]
pub struct RowRidge {
    /// Row `r` is the posterior mean of `a_r`.
    pub a_hat: DMatrix<f64>,
    /// Posterior of the first row; every row shares its covariance.
    shared: crate::bayes_linear::GaussianPosterior,
}

impl RowRidge {
    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a_hat * x
    }

    /// Per-coordinate predictive variance of the next state given `x`.
    pub fn predictive_variance(&self, x: &DVector<f64>, noise_var: f64) -> Result<f64> {
        predictive_variance(&self.shared, x, noise_var)
    }
}

impl TransitionSums {
    pub fn new(dim: usize) -> Self {
        Self {
            rows: (0..dim).map(|_| PrefixSums::new(dim)).collect(),
            last: None,
        }
    }

    pub fn from_states(states: &[DVector<f64>]) -> Result<Self> {
        let dim = states.first().map_or(0, |s| s.len());
        let mut sums = Self::new(dim);
        for s in states {
            sums.push_state(s)?;
        }
        Ok(sums)
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Number of states recorded.
    pub fn len(&self) -> usize {
        self.rows.first().map_or(0, PrefixSums::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.last.as_ref()
    }

    pub fn push_state(&mut self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match &self.last {
            None => self.rows.iter_mut().for_each(PrefixSums::push_empty),
            Some(prev) => {
                for (r, row) in self.rows.iter_mut().enumerate() {
                    row.push(prev, x[r])?;
                }
            }
        }
        self.last = Some(x.clone());
        Ok(())
    }

    /// Ridge estimate from transitions into states `lo+1 ..= hi` under the
    /// row prior `N(0, τ² I)`.
    pub fn ridge(&self, lo: usize, hi: usize, row_prior_var: f64, noise_var: f64) -> Result<RowRidge> {
        let d = self.dim();
        let prior = GaussianPrior::isotropic(d, 1.0 / row_prior_var)?;
        let mut a_hat = DMatrix::zeros(d, d);
        let mut shared = None;
        for (r, row) in self.rows.iter().enumerate() {
            let post = ridge_posterior(&row.between(lo, hi)?, &prior, noise_var)?;
            a_hat.set_row(r, &post.mean.transpose());
            shared.get_or_insert(post);
        }
        let shared = shared.ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?;
        Ok(RowRidge { a_hat, shared })
    }
}

/// Active range `(lo, hi)` used to predict state `s` under change point `k`.
fn active_range(k: usize, s: usize) -> (usize, usize) {
    if s <= k {
        (0, s - 1)
    } else {
        (k, s - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdsBank {
    /// Number of states observed.
    pub t: usize,
    pub candidates: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Sequential averaging over a fixed grid of change points, each carried
/// as its own hypothesis with a uniform initial weight.
#[derive(Debug, Clone)]
pub struct LdsBmaEngine {
    support: CpSupport,
    row_prior_var: f64,
    noise_var: f64,
    sums: TransitionSums,
    log_weights: Vec<f64>,
}

impl LdsBmaEngine {
    pub fn new(dim: usize, support: CpSupport, row_prior_var: f64, noise_var: f64) -> Result<Self> {
        if support.low == 0 || support.low > support.high {
            return Err(Error::Config(format!(
                "invalid change-point support [{}, {}]",
                support.low, support.high
            )));
        }
        if !(row_prior_var > 0.0 && noise_var > 0.0) {
            return Err(Error::Config("τ² and σ² must be positive".into()));
        }
        Ok(Self {
            support,
            row_prior_var,
            noise_var,
            sums: TransitionSums::new(dim),
            log_weights: vec![0.0; support.size()],
        })
    }

    fn candidates(&self) -> impl Iterator<Item = usize> {
        self.support.low..=self.support.high
    }

    pub fn bank(&self) -> LdsBank {
        LdsBank {
            t: self.sums.len(),
            candidates: self.candidates().collect(),
            weights: softmax(&self.log_weights).unwrap_or_default(),
        }
    }

    /// Records the next state, multiplying every weight by the predictive
    /// density its hypothesis assigned to that state.
    pub fn observe(&mut self, x: &DVector<f64>) -> Result<()> {
        let s = self.sums.len() + 1;
        if let Some(prev) = self.sums.last_state() {
            for (i, k) in self.candidates().enumerate() {
                let (lo, hi) = active_range(k, s);
                let ridge = self.sums.ridge(lo, hi, self.row_prior_var, self.noise_var)?;
                let mean = ridge.predict(prev);
                let var = ridge.predictive_variance(prev, self.noise_var)?;
                if x.len() != mean.len() {
                    return Err(Error::DimensionMismatch {
                        expected: mean.len(),
                        got: x.len(),
                    });
                }
                let sq: f64 = (x - mean).norm_squared();
                let d = x.len() as f64;
                self.log_weights[i] -= 0.5 * (d * (2.0 * std::f64::consts::PI * var).ln() + sq / var);
            }
            let top = self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return Err(Error::DegenerateWeights);
            }
            self.log_weights.iter_mut().for_each(|w| *w -= top);
        }
        self.sums.push_state(x)
    }

    /// Mixture prediction `Σ_k α_k Â_k x_t` of the next state.
    pub fn predict(&self) -> Result<(DVector<f64>, LdsBank)> {
        let bank = self.bank();
        let Some(last) = self.sums.last_state() else {
            return Ok((DVector::zeros(self.sums.dim()), bank));
        };
        let s = self.sums.len() + 1;
        let mut out = DVector::zeros(self.sums.dim());
        for (k, w) in bank.candidates.iter().zip(&bank.weights) {
            let (lo, hi) = active_range(*k, s);
            let ridge = self.sums.ridge(lo, hi, self.row_prior_var, self.noise_var)?;
            out.axpy(*w, &ridge.predict(last), 1.0);
        }
        Ok((out, bank))
    }

    /// Observes `x_t` and predicts `x_{t+1}`.
    pub fn step(&mut self, x: &DVector<f64>) -> Result<(DVector<f64>, LdsBank)> {
        self.observe(x)?;
        self.predict()
    }
}
