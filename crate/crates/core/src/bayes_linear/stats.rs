use nalgebra::{DMatrix, DVector};

use super::symmetrize;
use crate::{Error, Result};

/// Sufficient statistics of one data segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    /// Gram matrix `Σ x xᵀ`.
    pub gram: DMatrix<f64>,
    /// Cross moment `Σ x y`.
    pub xy: DVector<f64>,
    /// Label energy `Σ y²`.
    pub yy: f64,
    /// Number of samples.
    pub n: usize,
}

impl SuffStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            xy: DVector::zeros(dim),
            yy: 0.0,
            n: 0,
        }
    }

    /// Direct summation over `(x_i, y_i)` pairs.
    pub fn from_samples(dim: usize, xs: &[DVector<f64>], ys: &[f64]) -> Result<Self> {
        let mut s = Self::zeros(dim);
        for (x, &y) in xs.iter().zip(ys) {
            s.add_sample(x, y)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.xy.len()
    }

    pub fn add_sample(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        self.gram.ger(1.0, x, x, 1.0);
        self.xy.axpy(y, x, 1.0);
        self.yy += y * y;
        self.n += 1;
        Ok(())
    }

    /// `self − earlier`, symmetrised. Counts must not go negative.
    pub fn minus(&self, earlier: &SuffStats) -> SuffStats {
        let mut gram = &self.gram - &earlier.gram;
        symmetrize(&mut gram);
        SuffStats {
            gram,
            xy: &self.xy - &earlier.xy,
            yy: self.yy - earlier.yy,
            n: self.n - earlier.n,
        }
    }

    pub fn plus(&self, other: &SuffStats) -> SuffStats {
        SuffStats {
            gram: &self.gram + &other.gram,
            xy: &self.xy + &other.xy,
            yy: self.yy + other.yy,
            n: self.n + other.n,
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Cumulative statistics `P_0 = 0, P_j = Σ_{i ≤ j} (x_i x_iᵀ, x_i y_i, y_i²)`.
///
/// A position may also be recorded without a sample (see
/// [`PrefixSums::push_empty`]); the count stored in each entry keeps segment
/// sizes honest in that case.
#[derive(Debug, Clone)]
pub struct PrefixSums {
    entries: Vec<SuffStats>,
}

impl PrefixSums {
    pub fn new(dim: usize) -> Self {
        Self {
            entries: vec![SuffStats::zeros(dim)],
        }
    }

    pub fn from_samples(dim: usize, xs: &[DVector<f64>], ys: &[f64]) -> Result<Self> {
        let mut p = Self::new(dim);
        for (x, &y) in xs.iter().zip(ys) {
            p.push(x, y)?;
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.entries[0].dim()
    }

    /// Number of recorded positions (the largest valid `j`).
    pub fn len(&self) -> usize {
        self.entries.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends position `j + 1` with `P_{j+1} = P_j + (x xᵀ, x y, y²)`.
    pub fn push(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        let mut next = self.entries[self.len()].clone();
        next.add_sample(x, y)?;
        self.entries.push(next);
        Ok(())
    }

    /// Appends a position that carries no sample (`P_{j+1} = P_j`).
    pub fn push_empty(&mut self) {
        let next = self.entries[self.len()].clone();
        self.entries.push(next);
    }

    /// `P_j`.
    pub fn at(&self, j: usize) -> Result<&SuffStats> {
        self.entries.get(j).ok_or(Error::OutOfRange(j))
    }

    /// Statistics of positions `lo+1 ..= hi`, i.e. `P_hi − P_lo`.
    pub fn between(&self, lo: usize, hi: usize) -> Result<SuffStats> {
        if lo > hi {
            return Err(Error::InvalidSegment { k: lo, t: hi + 1 });
        }
        Ok(self.at(hi)?.minus(self.at(lo)?))
    }

    /// Post-change statistics of hypothesis `k` at time `t`: samples
    /// `k+1 ..= t−1`, i.e. `P_{t−1} − P_k`.
    pub fn segment_stats(&self, k: usize, t: usize) -> Result<SuffStats> {
        if t == 0 || k > t - 1 {
            return Err(Error::InvalidSegment { k, t });
        }
        self.between(k, t - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<DVector<f64>>, Vec<f64>) {
        let xs = (0..n)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)))
            .collect();
        let ys = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        (xs, ys)
    }

    #[test]
    fn single_update_is_rank_one() {
        let mut p = PrefixSums::new(2);
        p.push(&DVector::from_vec(vec![1.0, 0.0]), 2.0).unwrap();
        let p1 = p.at(1).unwrap();
        assert_eq!(p1.gram, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(p1.xy, DVector::from_vec(vec![2.0, 0.0]));
        assert_eq!(p1.yy, 4.0);
        assert_eq!(p1.n, 1);
    }

    #[test]
    fn zero_sample_leaves_sums_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, ys) = random_data(&mut rng, 3, 2);
        let mut p = PrefixSums::from_samples(2, &xs, &ys).unwrap();
        p.push(&DVector::zeros(2), 0.0).unwrap();
        let (a, b) = (p.at(3).unwrap(), p.at(4).unwrap());
        assert_eq!(a.gram, b.gram);
        assert_eq!(a.xy, b.xy);
        assert_eq!(a.yy, b.yy);
    }

    #[test]
    fn incremental_matches_batch_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (xs, ys) = random_data(&mut rng, 25, 3);
        let p = PrefixSums::from_samples(3, &xs, &ys).unwrap();
        for j in 0..=25 {
            // batch oracle: explicit outer products
            let mut gram = DMatrix::<f64>::zeros(3, 3);
            let mut xy = DVector::<f64>::zeros(3);
            let mut yy = 0.0;
            for i in 0..j {
                gram += &xs[i] * xs[i].transpose();
                xy += &xs[i] * ys[i];
                yy += ys[i] * ys[i];
            }
            let pj = p.at(j).unwrap();
            assert!((&pj.gram - gram).amax() < 1e-12);
            assert!((&pj.xy - xy).amax() < 1e-12);
            assert!((pj.yy - yy).abs() < 1e-12);
            assert_eq!(pj.n, j);
        }
    }

    #[test]
    fn prefix_yy_is_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (xs, ys) = random_data(&mut rng, 30, 2);
        let p = PrefixSums::from_samples(2, &xs, &ys).unwrap();
        for j in 1..=30 {
            assert!(p.at(j).unwrap().yy >= p.at(j - 1).unwrap().yy);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut p = PrefixSums::new(2);
        let err = p.push(&DVector::zeros(3), 1.0).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn segment_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xs, ys) = random_data(&mut rng, 10, 2);
        let p = PrefixSums::from_samples(2, &xs, &ys).unwrap();
        let empty = p.segment_stats(6, 7).unwrap();
        assert_eq!(empty.n, 0);
        assert_eq!(empty.gram.amax(), 0.0);
        assert_eq!(empty.yy, 0.0);
        let full = p.segment_stats(0, 11).unwrap();
        assert_eq!(full.n, 10);
        assert!((full.gram - &p.at(10).unwrap().gram).amax() == 0.0);
        assert!(matches!(p.segment_stats(7, 7), Err(Error::InvalidSegment { .. })));
        assert!(matches!(p.segment_stats(0, 12), Err(Error::OutOfRange(11))));
    }

    #[test]
    fn segment_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (xs, ys) = random_data(&mut rng, 12, 3);
        let p = PrefixSums::from_samples(3, &xs, &ys).unwrap();
        // (k, t) = (4, 9): samples 5..=8, zero-based 4..8
        let seg = p.segment_stats(4, 9).unwrap();
        let direct = SuffStats::from_samples(3, &xs[4..8], &ys[4..8]).unwrap();
        assert!((&seg.gram - &direct.gram).amax() < 1e-12);
        assert!((&seg.xy - &direct.xy).amax() < 1e-12);
        assert!((seg.yy - direct.yy).abs() < 1e-12);
        assert_eq!(seg.n, 4);
        assert_eq!(seg.gram, seg.gram.transpose());
    }

    #[test]
    fn pushing_an_empty_position_keeps_counts() {
        let mut p = PrefixSums::new(1);
        p.push_empty();
        p.push(&DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.at(1).unwrap().n, 0);
        assert_eq!(p.segment_stats(0, 3).unwrap().n, 1);
    }
}
