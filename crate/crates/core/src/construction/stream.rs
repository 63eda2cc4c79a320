use nalgebra::{DMatrix, DVector};

use super::pe::PeTable;
use crate::bayes_linear::SuffStats;
use crate::{Error, Result};

/// Slot layout of one token:
/// `[x (d) | y | vec(x xᵀ) (d²) | x y (d) | y² | PE (p) | S̄ (r) | P (r)]`
/// where `r = d² + d + 1` is the width of the raw statistics block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub pe_width: usize,
}

impl Layout {
    pub fn raw_width(&self) -> usize {
        self.dim * self.dim + self.dim + 1
    }

    pub fn raw_start(&self) -> usize {
        self.dim + 1
    }

    pub fn pe_start(&self) -> usize {
        self.raw_start() + self.raw_width()
    }

    pub fn mean_start(&self) -> usize {
        self.pe_start() + self.pe_width
    }

    pub fn prefix_start(&self) -> usize {
        self.mean_start() + self.raw_width()
    }

    /// Total residual width `D`.
    pub fn width(&self) -> usize {
        self.prefix_start() + self.raw_width()
    }

    /// `[vec(x xᵀ) | x y | y²]` of one sample.
    pub fn pack(&self, x: &DVector<f64>, y: f64) -> DVector<f64> {
        let d = self.dim;
        let mut v = DVector::zeros(self.raw_width());
        let outer = x * x.transpose();
        v.rows_mut(0, d * d).copy_from_slice(outer.as_slice());
        v.rows_mut(d * d, d).copy_from(&(x * y));
        v[d * d + d] = y * y;
        v
    }

    /// Reads a raw-statistics block back as [`SuffStats`] with count `n`.
    pub fn unpack(&self, v: &DVector<f64>, n: usize) -> SuffStats {
        let d = self.dim;
        let mut gram = DMatrix::from_column_slice(d, d, &v.as_slice()[..d * d]);
        crate::bayes_linear::symmetrize(&mut gram);
        SuffStats {
            gram,
            xy: DVector::from_column_slice(&v.as_slice()[d * d..d * d + d]),
            yy: v[d * d + d],
            n,
        }
    }
}

/// Residual vectors of a prompt, one per position.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStream {
    pub layout: Layout,
    pub tokens: Vec<DVector<f64>>,
}

impl ResidualStream {
    /// Token `j` (1-based) holds `[x_j | y_j | vec(x_j x_jᵀ) | x_j y_j | y_j² | PE(j) | 0]`.
    pub fn embed(xs: &[DVector<f64>], ys: &[f64], table: &PeTable) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        let dim = xs.first().map_or(0, |x| x.len());
        let layout = Layout {
            dim,
            pe_width: table.scheme().width(),
        };
        let mut tokens = Vec::with_capacity(xs.len());
        for (i, (x, &y)) in xs.iter().zip(ys).enumerate() {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
            let mut h = DVector::zeros(layout.width());
            h.rows_mut(0, dim).copy_from(x);
            h[dim] = y;
            h.rows_mut(layout.raw_start(), layout.raw_width())
                .copy_from(&layout.pack(x, y));
            if layout.pe_width > 0 {
                h.rows_mut(layout.pe_start(), layout.pe_width)
                    .copy_from(table.encode(i + 1)?);
            }
            tokens.push(h);
        }
        Ok(Self { layout, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn block(&self, i: usize, start: usize, width: usize) -> DVector<f64> {
        self.tokens[i].rows(start, width).into_owned()
    }

    /// `S_i^raw` of the token at 0-based index `i`.
    pub fn raw(&self, i: usize) -> DVector<f64> {
        self.block(i, self.layout.raw_start(), self.layout.raw_width())
    }

    pub fn pe(&self, i: usize) -> &[f64] {
        let start = self.layout.pe_start();
        &self.tokens[i].as_slice()[start..start + self.layout.pe_width]
    }

    pub fn running_mean(&self, i: usize) -> DVector<f64> {
        self.block(i, self.layout.mean_start(), self.layout.raw_width())
    }

    pub fn prefix(&self, i: usize) -> DVector<f64> {
        self.block(i, self.layout.prefix_start(), self.layout.raw_width())
    }

    pub(crate) fn set_running_mean(&mut self, i: usize, v: &DVector<f64>) {
        let (s, w) = (self.layout.mean_start(), self.layout.raw_width());
        self.tokens[i].rows_mut(s, w).copy_from(v);
    }

    pub(crate) fn set_prefix(&mut self, i: usize, v: &DVector<f64>) {
        let (s, w) = (self.layout.prefix_start(), self.layout.raw_width());
        self.tokens[i].rows_mut(s, w).copy_from(v);
    }
}
