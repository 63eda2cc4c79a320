//! Small numerically stable helpers shared by the weighting and attention code.

/// `log(Σ exp(v_i))` with max subtraction. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax over `logits`. An empty input yields an empty output; an input of
/// all `-inf` yields `None`.
pub fn softmax(logits: &[f64]) -> Option<Vec<f64>> {
    if logits.is_empty() {
        return Some(Vec::new());
    }
    let lse = log_sum_exp(logits);
    if !lse.is_finite() {
        return None;
    }
    let mut out: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    // re-normalise to kill the last ulp of drift
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    Some(out)
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Shortest decimal string that parses back to the same `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}
