use crate::changepoint_bma::{BmaParams, MarginalMode};

/// Constants of the end-to-end error bound on data with `‖x‖ ≤ B_x`,
/// `|y| ≤ B_y` and at most `N` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    /// Lipschitz constant of the posterior predictive mean in the segment
    /// statistics.
    pub l_m: f64,
    /// Lipschitz constant of a hypothesis' log-evidence.
    pub l_ell: f64,
    /// Bound on every posterior predictive mean.
    pub m_m: f64,
}

impl ErrorBounds {
    pub fn new(params: &BmaParams, dim: usize, len: usize, b_x: f64, b_y: f64) -> Self {
        let BmaParams { lambda, noise_var: s2, marginal_mode } = *params;
        // ‖b‖ ≤ N B_x B_y for every segment
        let b_b = len as f64 * b_x * b_y;
        // m = xᵀ (λI + A/σ²)⁻¹ b/σ² with ‖(λI + A/σ²)⁻¹‖ ≤ 1/λ
        let l_m = b_x / s2 * (1.0 / lambda + b_b / (lambda * lambda * s2));
        let m_m = b_x / (lambda * s2) * b_b;
        // ∂ log det(I + A/(λσ²)), ∂c, ∂(bᵀΣb)/σ⁴
        let single = 0.5 * (dim as f64).sqrt() / (lambda * s2)
            + 0.5 / s2
            + 0.5 / (s2 * s2) * (2.0 * b_b / lambda + b_b * b_b / (lambda * lambda * s2));
        let l_ell = match marginal_mode {
            MarginalMode::TwoSegment => 2.0 * single,
            MarginalMode::PostSegmentOnly => single,
        };
        Self { l_m, l_ell, m_m }
    }

    /// `2 L_ℓ ε (M_m + L_m ε) + L_m ε` for a statistics error `ε`.
    pub fn total(&self, eps: f64) -> f64 {
        2.0 * self.l_ell * eps * (self.m_m + self.l_m * eps) + self.l_m * eps
    }
}
