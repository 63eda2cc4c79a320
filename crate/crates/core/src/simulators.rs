//! Seeded generators for piecewise-linear regression prompts and
//! piecewise-stable linear dynamical system trajectories.
//!
//! Every trajectory is a pure function of `(config, seed, index)`: the
//! generator is a ChaCha8 stream keyed by `seed` with the trajectory index as
//! its stream id, so trajectories can be drawn in any order or in parallel.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::math::format_real;
use crate::{Error, Result};

/// Inclusive integer range `[low, high]` of admissible change points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpSupport {
    pub low: usize,
    pub high: usize,
}

impl CpSupport {
    pub fn new(low: usize, high: usize) -> Self {
        Self { low, high }
    }

    pub fn singleton(k: usize) -> Self {
        Self { low: k, high: k }
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.low..=self.high).contains(&k)
    }

    pub fn size(&self) -> usize {
        self.high + 1 - self.low
    }

    /// Checks `1 ≤ low ≤ high ≤ len − 1`.
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.low < 1 || self.low > self.high || self.high + 1 > len {
            return Err(Error::Config(format!(
                "change-point support [{}, {}] must satisfy 1 ≤ L ≤ U ≤ N−1 with N = {len}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// How the post-change regression weight relates to the pre-change one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskLink {
    /// `w₂` drawn independently from the prior.
    Independent,
    /// `w₂ = −w₁ + ε η`, `η ~ N(0, I)`.
    Anticorrelated { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    pub dim: usize,
    pub len: usize,
    pub cp_support: CpSupport,
    pub noise_std: f64,
    /// λ: the weights are drawn from `N(0, λ⁻¹ I)`.
    pub prior_precision: f64,
    pub task_link: TaskLink,
}

impl RegressionConfig {
    /// N = 30, change point in {10..20}, σ = 0.1, λ = 1, independent tasks.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            len: 30,
            cp_support: CpSupport::new(10, 20),
            noise_std: 0.1,
            prior_precision: 1.0,
            task_link: TaskLink::Independent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        self.cp_support.validate(self.len)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if !(self.prior_precision > 0.0 && self.prior_precision.is_finite()) {
            return Err(Error::Config(format!(
                "prior precision must be > 0, got {}",
                self.prior_precision
            )));
        }
        if let TaskLink::Anticorrelated { epsilon } = self.task_link {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                return Err(Error::Config(format!("link ε must be ≥ 0, got {epsilon}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdsConfig {
    pub dim: usize,
    pub len: usize,
    pub cp_support: CpSupport,
    pub noise_std: f64,
    /// τ²: entries of each system matrix are drawn from `N(0, τ²)`.
    pub row_prior_var: f64,
    /// Matrices with spectral radius above this cap are rescaled onto it.
    pub spectral_cap: f64,
}

impl LdsConfig {
    /// N = 40, change point in {15..25}, σ = 0.1, τ² = 1/d, ρ_max = 0.95.
    pub fn standard(dim: usize) -> Self {
        Self {
            dim,
            len: 40,
            cp_support: CpSupport::new(15, 25),
            noise_std: 0.1,
            row_prior_var: 1.0 / dim as f64,
            spectral_cap: 0.95,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        self.cp_support.validate(self.len)?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be ≥ 0, got {}", self.noise_std)));
        }
        if !(self.row_prior_var > 0.0 && self.row_prior_var.is_finite()) {
            return Err(Error::Config(format!("τ² must be > 0, got {}", self.row_prior_var)));
        }
        if !(self.spectral_cap > 0.0 && self.spectral_cap < 1.0) {
            return Err(Error::Config(format!(
                "spectral cap must lie in (0, 1), got {}",
                self.spectral_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// Pairs `(x_i, y_i)`, `i = 1..N`, with the true weights.
    Regression {
        xs: Vec<DVector<f64>>,
        ys: Vec<f64>,
        w1: DVector<f64>,
        w2: DVector<f64>,
    },
    /// States `x_1..x_N` with the true system matrices. State `x_t` for
    /// `2 ≤ t ≤ n₁*` is produced by `A₁`, later states by `A₂`.
    Lds {
        states: Vec<DVector<f64>>,
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub index: u64,
    /// n₁*: the last index generated by the first regime.
    pub true_cp: usize,
    pub kind: TrajectoryKind,
}

/// Sidecar record written next to a serialised trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub index: u64,
    pub n1_star: usize,
    pub kind: String,
    pub d: usize,
    #[serde(rename = "N")]
    pub len: usize,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        match &self.kind {
            TrajectoryKind::Regression { w1, .. } => w1.len(),
            TrajectoryKind::Lds { a1, .. } => a1.nrows(),
        }
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            TrajectoryKind::Regression { ys, .. } => ys.len(),
            TrajectoryKind::Lds { states, .. } => states.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            seed: self.seed,
            index: self.index,
            n1_star: self.true_cp,
            kind: match self.kind {
                TrajectoryKind::Regression { .. } => "regression".into(),
                TrajectoryKind::Lds { .. } => "lds".into(),
            },
            d: self.dim(),
            len: self.len(),
        }
    }

    /// One line per time step, `t,x0,…,x{d−1}[,y]`, preceded by a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        if matches!(self.kind, TrajectoryKind::Regression { .. }) {
            header.push("y".into());
        }
        writeln!(out, "{}", header.join(","))?;
        match &self.kind {
            TrajectoryKind::Regression { xs, ys, .. } => {
                for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
                    writeln!(out, "{},{},{}", i + 1, join_reals(x.iter()), format_real(*y))?;
                }
            }
            TrajectoryKind::Lds { states, .. } => {
                for (i, x) in states.iter().enumerate() {
                    writeln!(out, "{},{}", i + 1, join_reals(x.iter()))?;
                }
            }
        }
        Ok(())
    }
}

fn join_reals<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| format_real(*v)).collect::<Vec<_>>().join(",")
}

/// The generator for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw from `{low, …, high}`.
pub fn sample_changepoint<R: Rng + ?Sized>(support: CpSupport, rng: &mut R) -> Result<usize> {
    if support.low > support.high {
        return Err(Error::Config(format!(
            "empty change-point support [{}, {}]",
            support.low, support.high
        )));
    }
    Ok(rng.random_range(support.low..=support.high))
}

fn normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

pub fn gen_regression_trajectory(cfg: &RegressionConfig, seed: u64) -> Result<Trajectory> {
    gen_regression_trajectory_indexed(cfg, seed, 0)
}

/// Draws one piecewise-linear regression prompt: `x_i ~ N(0, I)`,
/// `w₁ ~ N(0, λ⁻¹ I)`, `w₂` per the task link, `y_i = ⟨w, x_i⟩ + σ ε_i`.
pub fn gen_regression_trajectory_indexed(
    cfg: &RegressionConfig,
    seed: u64,
    index: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = trajectory_rng(seed, index);
    let d = cfg.dim;
    let true_cp = sample_changepoint(cfg.cp_support, &mut rng)?;
    let scale = cfg.prior_precision.sqrt().recip();
    let w1 = normal_vector(d, &mut rng) * scale;
    let w2 = match cfg.task_link {
        TaskLink::Independent => normal_vector(d, &mut rng) * scale,
        TaskLink::Anticorrelated { epsilon } => -&w1 + normal_vector(d, &mut rng) * epsilon,
    };
    let mut xs = Vec::with_capacity(cfg.len);
    let mut ys = Vec::with_capacity(cfg.len);
    for i in 1..=cfg.len {
        let x = normal_vector(d, &mut rng);
        let noise: f64 = rng.sample(StandardNormal);
        let w = if i <= true_cp { &w1 } else { &w2 };
        ys.push(w.dot(&x) + cfg.noise_std * noise);
        xs.push(x);
    }
    Ok(Trajectory {
        seed,
        index,
        true_cp,
        kind: TrajectoryKind::Regression { xs, ys, w1, w2 },
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Rescales `m` onto spectral radius `cap` when it exceeds it.
pub fn stabilize(m: DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let rho = spectral_radius(&m);
    if rho > cap {
        m * (cap / rho)
    } else {
        m
    }
}

/// Entries `N(0, τ²)`, then [`stabilize`]d onto `ρ_max`.
pub fn make_stable_matrix<R: Rng + ?Sized>(
    dim: usize,
    row_prior_var: f64,
    spectral_cap: f64,
    rng: &mut R,
) -> DMatrix<f64> {
    let sd = row_prior_var.sqrt();
    let m = DMatrix::from_fn(dim, dim, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    stabilize(m, spectral_cap)
}

pub fn gen_lds_trajectory(cfg: &LdsConfig, seed: u64) -> Result<Trajectory> {
    gen_lds_trajectory_indexed(cfg, seed, 0)
}

/// Draws one piecewise-stable LDS trajectory: `x_1 ~ N(0, I)` and
/// `x_t = A x_{t−1} + σ ε_t` with `A = A₁` for `t ≤ n₁*`, `A₂` after.
pub fn gen_lds_trajectory_indexed(cfg: &LdsConfig, seed: u64, index: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = trajectory_rng(seed, index);
    let d = cfg.dim;
    let true_cp = sample_changepoint(cfg.cp_support, &mut rng)?;
    let a1 = make_stable_matrix(d, cfg.row_prior_var, cfg.spectral_cap, &mut rng);
    let a2 = make_stable_matrix(d, cfg.row_prior_var, cfg.spectral_cap, &mut rng);
    let mut states = Vec::with_capacity(cfg.len);
    states.push(normal_vector(d, &mut rng));
    for t in 2..=cfg.len {
        let a = if t <= true_cp { &a1 } else { &a2 };
        let next = a * &states[t - 2] + normal_vector(d, &mut rng) * cfg.noise_std;
        states.push(next);
    }
    Ok(Trajectory {
        seed,
        index,
        true_cp,
        kind: TrajectoryKind::Lds { states, a1, a2 },
    })
}
