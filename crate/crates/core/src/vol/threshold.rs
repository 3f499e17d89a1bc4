use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shrinkage applied to off-diagonal idiosyncratic entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shrink {
    #[default]
    Soft,
    Hard,
}

impl Shrink {
    #[inline]
    pub fn apply(self, x: f64, tau: f64) -> f64 {
        match self {
            Shrink::Soft => x.signum() * (x.abs() - tau).max(0.0),
            Shrink::Hard => {
                if x.abs() > tau {
                    x
                } else {
                    0.0
                }
            }
        }
    }
}

/// Rate φ_nd = 1/√d + √(log d)/n^{1/4} of the spot thresholds.
pub fn spot_rate(n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    1.0 / d.sqrt() + d.ln().max(0.0).sqrt() / n.powf(0.25)
}

/// Rate 1/√d + √(log d)/√n of the integrated thresholds.
pub fn integrated_rate(n: usize, d: usize) -> f64 {
    let (n, d) = (n as f64, d as f64);
    1.0 / d.sqrt() + d.ln().max(0.0).sqrt() / n.sqrt()
}

/// τ = C · rate · √ħ entrywise (negative ħ floored at zero).
pub fn thresholds(h: &DMatrix<f64>, c: f64, rate: f64) -> DMatrix<f64> {
    h.map(|v| c * rate * v.max(0.0).sqrt())
}

/// ħ for integrated thresholds: k_nΔ_n Σ_k (V̂^e(k) − Σ̂^e)².
pub fn integrated_hbar(spots: &[DMatrix<f64>], integrated: &DMatrix<f64>, k_n: usize, delta_n: f64) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(integrated.nrows(), integrated.ncols());
    for v in spots {
        acc += (v - integrated).map(|e| e * e);
    }
    acc * (k_n as f64 * delta_n)
}

/// Entrywise shrinkage of the off-diagonal part; the diagonal is copied.
pub fn poet_threshold(m: &DMatrix<f64>, tau: &DMatrix<f64>, shrink: Shrink) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d || tau.shape() != m.shape() {
        return Err(Error::Shape("threshold inputs must be square and conformable".into()));
    }
    for i in 0..d {
        for k in (i + 1)..d {
            if m[(i, k)] != m[(k, i)] {
                return Err(Error::Argument(format!("matrix is not symmetric at ({i}, {k})")));
            }
        }
    }
    if tau.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Argument("thresholds must be non-negative".into()));
    }
    let mut out = m.clone();
    for i in 0..d {
        for k in (i + 1)..d {
            let t = 0.5 * (tau[(i, k)] + tau[(k, i)]);
            let v = shrink.apply(m[(i, k)], t);
            out[(i, k)] = v;
            out[(k, i)] = v;
        }
    }
    Ok(out)
}
