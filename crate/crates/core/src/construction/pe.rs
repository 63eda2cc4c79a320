use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two table entries closer than this cannot be told apart when decoding.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PeScheme {
    None,
    /// `PE(j) = [j]`.
    Linear,
    /// `PE(j)_{2i} = sin(j ω_i)`, `PE(j)_{2i+1} = cos(j ω_i)` with
    /// `ω_i = base^{−2i/dim}`.
    Sinusoidal { dim: usize, base: f64 },
}

impl PeScheme {
    pub fn sinusoidal_default() -> Self {
        PeScheme::Sinusoidal { dim: 16, base: 10_000.0 }
    }

    pub fn width(&self) -> usize {
        match self {
            PeScheme::None => 0,
            PeScheme::Linear => 1,
            PeScheme::Sinusoidal { dim, .. } => *dim,
        }
    }

    pub fn encode(&self, j: usize) -> DVector<f64> {
        match *self {
            PeScheme::None => DVector::zeros(0),
            PeScheme::Linear => DVector::from_element(1, j as f64),
            PeScheme::Sinusoidal { dim, base } => DVector::from_fn(dim, |r, _| {
                let omega = base.powf(-((r / 2 * 2) as f64) / dim as f64);
                let phase = j as f64 * omega;
                if r % 2 == 0 {
                    phase.sin()
                } else {
                    phase.cos()
                }
            }),
        }
    }
}

/// Encodings of positions `1..=len`, checked to be decodable.
#[derive(Debug, Clone)]
pub struct PeTable {
    scheme: PeScheme,
    rows: Vec<DVector<f64>>,
}

impl PeTable {
    pub fn new(scheme: PeScheme, len: usize) -> Result<Self> {
        if let PeScheme::Sinusoidal { dim, base } = scheme {
            if dim == 0 || dim % 2 != 0 || !(base > 1.0) {
                return Err(Error::Config(format!(
                    "sinusoidal encoding needs an even positive width and base > 1, got {dim} and {base}"
                )));
            }
        }
        let rows: Vec<_> = (1..=len).map(|j| scheme.encode(j)).collect();
        if scheme != PeScheme::None {
            for i in 0..rows.len() {
                for k in (i + 1)..rows.len() {
                    if (&rows[i] - &rows[k]).norm() <= TIE_TOLERANCE {
                        return Err(Error::AmbiguousPosition(k + 1));
                    }
                }
            }
        }
        Ok(Self { scheme, rows })
    }

    pub fn scheme(&self) -> PeScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn encode(&self, j: usize) -> Result<&DVector<f64>> {
        j.checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .ok_or(Error::OutOfRange(j))
    }

    /// Position whose encoding is nearest to `pe`.
    pub fn decode(&self, pe: &[f64]) -> Result<usize> {
        match self.scheme {
            PeScheme::None => Err(Error::Config(
                "positions cannot be recovered without a positional encoding".into(),
            )),
            PeScheme::Linear => {
                let j = pe[0].round();
                if j >= 1.0 && (j as usize) <= self.rows.len() && (pe[0] - j).abs() <= 0.5 - TIE_TOLERANCE {
                    Ok(j as usize)
                } else {
                    Err(Error::AmbiguousPosition(j.max(0.0) as usize))
                }
            }
            PeScheme::Sinusoidal { .. } => {
                let pe = DVector::from_column_slice(pe);
                let mut best = (f64::INFINITY, 0usize);
                let mut second = f64::INFINITY;
                for (i, row) in self.rows.iter().enumerate() {
                    let dist = (row - &pe).norm();
                    if dist < best.0 {
                        second = best.0;
                        best = (dist, i + 1);
                    } else if dist < second {
                        second = dist;
                    }
                }
                if best.1 == 0 || second - best.0 <= TIE_TOLERANCE {
                    return Err(Error::AmbiguousPosition(best.1));
                }
                Ok(best.1)
            }
        }
    }

    /// Key feature `φ(PE(j))` of a context position.
    pub fn retrieval_key(&self, pe: &[f64]) -> Result<DVector<f64>> {
        match self.scheme {
            PeScheme::None => Err(Error::Config("retrieval needs a positional encoding".into())),
            PeScheme::Linear => Ok(DVector::from_vec(vec![1.0, pe[0], pe[0] * pe[0]])),
            PeScheme::Sinusoidal { .. } => Ok(DVector::from_column_slice(pe)),
        }
    }

    /// Query feature for target `k`, normalised so that the target logit
    /// is exactly `C`: linear keys give `C (1 − (j − k)²)`, sinusoidal keys
    /// `C ⟨PE(k), PE(j)⟩ / (dim/2)`.
    pub fn retrieval_query(&self, k: usize) -> Result<DVector<f64>> {
        match self.scheme {
            PeScheme::None => Err(Error::Config("retrieval needs a positional encoding".into())),
            PeScheme::Linear => {
                let k = k as f64;
                Ok(DVector::from_vec(vec![1.0 - k * k, 2.0 * k, -1.0]))
            }
            PeScheme::Sinusoidal { dim, .. } => Ok(self.encode(k)? / (dim as f64 / 2.0)),
        }
    }
}
