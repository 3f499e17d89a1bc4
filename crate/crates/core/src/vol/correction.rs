//! Staleness bias factor φ and its removal from co-volatility estimates.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::link::P_CEIL;

/// Entries whose bias factor falls below this are left uncorrected.
pub const PHI_FLOOR: f64 = 1e-6;

/// φ(x, y) = (1−x)(1−y)/(1−xy).
#[inline]
pub fn stale_factor(x: f64, y: f64) -> f64 {
    (1.0 - x) * (1.0 - y) / (1.0 - x * y)
}

/// Bias factors of every pair at one time point (diagonal set to 1).
///
/// Probabilities are clipped into [0, 0.95] first; the count of clipped
/// entries is returned alongside.
pub fn stale_factor_matrix(p: &[f64]) -> Result<(DMatrix<f64>, usize)> {
    let mut clipped = 0;
    let mut q = Vec::with_capacity(p.len());
    for &v in p {
        if !v.is_finite() {
            return Err(Error::Domain(format!("staleness probability {v} is not finite")));
        }
        let c = v.clamp(0.0, P_CEIL);
        if c != v {
            clipped += 1;
        }
        q.push(c);
    }
    let d = q.len();
    let m = DMatrix::from_fn(d, d, |i, k| if i == k { 1.0 } else { stale_factor(q[i], q[k]) });
    Ok((m, clipped))
}

/// Divide off-diagonal entries by φ; diagonal untouched.
///
/// Returns the corrected matrix and the number of (i < m) pairs left
/// uncorrected because φ < 1e-6.
pub fn staleness_correction(raw: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    if raw.shape() != phi.shape() || raw.nrows() != raw.ncols() {
        return Err(Error::Shape("correction factors must match a square matrix".into()));
    }
    let d = raw.nrows();
    let mut out = raw.clone();
    let mut skipped = 0;
    for m in 0..d {
        for i in 0..d {
            if i == m {
                continue;
            }
            let f = phi[(i, m)];
            if f < PHI_FLOOR {
                if i < m {
                    skipped += 1;
                }
                continue;
            }
            out[(i, m)] = raw[(i, m)] / f;
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corrected_entry(raw: f64, x: f64, y: f64) -> f64 {
        let (phi, _) = stale_factor_matrix(&[x, y]).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[1.0, raw, raw, 1.0]);
        staleness_correction(&m, &phi).unwrap().0[(0, 1)]
    }

    #[test]
    fn no_staleness_is_identity() {
        assert_eq!(corrected_entry(0.123, 0.0, 0.0), 0.123);
    }

    #[test]
    fn half_staleness_triples() {
        assert!((corrected_entry(0.10, 0.5, 0.5) - 0.30).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_pair() {
        assert!((stale_factor(0.2, 0.4) - 0.48 / 0.92).abs() < 1e-15);
        assert!((corrected_entry(0.0521739, 0.2, 0.4) - 0.10).abs() < 1e-7);
    }

    #[test]
    fn diagonal_untouched_and_clipping_counted() {
        let (phi, clipped) = stale_factor_matrix(&[0.99, 0.3, -0.1]).unwrap();
        assert_eq!(clipped, 2);
        let raw = DMatrix::from_element(3, 3, 2.0);
        let (out, skipped) = staleness_correction(&raw, &phi).unwrap();
        assert_eq!(skipped, 0);
        for i in 0..3 {
            assert_eq!(out[(i, i)], 2.0);
        }
        assert_eq!(out, out.transpose());
    }

    #[test]
    fn tiny_factor_left_alone() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 1e-9, 1e-9, 1.0]);
        let raw = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (out, skipped) = staleness_correction(&raw, &phi).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(out[(0, 1)], 0.5);
    }
}
