//! Efficient log prices with a continuous-time factor structure, and the
//! stale observation recursion.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bandwidth of the idiosyncratic correlation.
pub const BAND: usize = 5;

/// How the band parameter ρ ~ U(0, 0.4) is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// One draw shared by every pair.
    #[default]
    Shared,
    /// An independent draw for every pair inside the band.
    PerPair,
}

/// ρ*_im = ρ^{|i−m|} for 0 < |i−m| <= 5, unit diagonal, zero elsewhere.
pub fn banded_correlation(d: usize, rho: f64) -> DMatrix<f64> {
    let mut powers = [1.0; BAND + 1];
    for l in 1..=BAND {
        powers[l] = powers[l - 1] * rho;
    }
    DMatrix::from_fn(d, d, |i, m| powers.get(i.abs_diff(m)).copied().unwrap_or(0.0))
}

/// Draw ρ and build the banded correlation; returns (ρ*, shared ρ or NaN for per-pair).
pub fn build_banded_correlation<R: Rng + ?Sized>(d: usize, mode: RhoMode, rng: &mut R) -> Result<(DMatrix<f64>, f64)> {
    if d < 2 {
        return Err(Error::Argument(format!("correlation dimension {d} < 2")));
    }
    match mode {
        RhoMode::Shared => {
            let rho = rng.random_range(0.0..0.4);
            Ok((banded_correlation(d, rho), rho))
        }
        RhoMode::PerPair => {
            let mut m = DMatrix::identity(d, d);
            for i in 0..d {
                for k in (i + 1)..d.min(i + BAND + 1) {
                    let rho: f64 = rng.random_range(0.0..0.4);
                    let v = rho.powi((k - i) as i32);
                    m[(i, k)] = v;
                    m[(k, i)] = v;
                }
            }
            Ok((m, f64::NAN))
        }
    }
}

/// Efficient log prices and the true integrated volatility matrices.
#[derive(Debug, Clone)]
pub struct PriceDraw {
    pub y_eff: DMatrix<f64>,
    pub sigma_c: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
}

/// Euler increments ΔY_j = σ_{j−1}ΔW_j + σ*_{j−1}ΔW*_j with ΔW* ~ N(0, Δ ρ*), Y_0 = 0.
///
/// `sigma_sys` holds one (n+1) × d matrix per price factor.
pub fn simulate_prices<R: Rng + ?Sized>(
    delta: f64,
    sigma_sys: &[DMatrix<f64>],
    sigma_idio: &DMatrix<f64>,
    rho_star: &DMatrix<f64>,
    rng_sys: &mut R,
    rng_idio: &mut R,
) -> Result<PriceDraw> {
    let (rows, d) = sigma_idio.shape();
    if rows < 2 {
        return Err(Error::Shape("need at least two time points".into()));
    }
    if sigma_sys.iter().any(|m| m.shape() != (rows, d)) || rho_star.shape() != (d, d) {
        return Err(Error::Shape("volatility paths and ρ* disagree in shape".into()));
    }
    let chol = rho_star
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("ρ* is not positive semidefinite".into()))?;
    let lower = chol.l();
    let n = rows - 1;
    let sqrt_dt = delta.sqrt();
    let r = sigma_sys.len();

    let mut y = DMatrix::zeros(rows, d);
    let mut dw = vec![0.0; r];
    let mut xi = nalgebra::DVector::zeros(d);
    for j in 1..=n {
        for w in dw.iter_mut() {
            *w = sqrt_dt * rng_sys.sample::<f64, _>(StandardNormal);
        }
        for v in xi.iter_mut() {
            *v = rng_idio.sample::<f64, _>(StandardNormal);
        }
        let dw_star = &lower * &xi * sqrt_dt;
        for i in 0..d {
            let mut inc = sigma_idio[(j - 1, i)] * dw_star[i];
            for (l, s) in sigma_sys.iter().enumerate() {
                inc += s[(j - 1, i)] * dw[l];
            }
            y[(j, i)] = y[(j - 1, i)] + inc;
        }
    }

    // Left-point Riemann sums matching the Euler scheme.
    let mut sigma_c = DMatrix::zeros(d, d);
    for s in sigma_sys {
        let head = s.rows(0, n);
        sigma_c += head.transpose() * head * delta;
    }
    let head = sigma_idio.rows(0, n);
    let sigma_e = (head.transpose() * head * delta).component_mul(rho_star);
    Ok(PriceDraw {
        y_eff: y,
        sigma_c,
        sigma_e,
    })
}

/// Observed prices: Ỹ_j = Y_j when B_j = 0, else Ỹ_{j−1}; row 0 copied from Y.
pub fn apply_staleness(y_eff: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y_eff.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "prices {:?} and indicators {:?} differ",
            y_eff.shape(),
            b.shape()
        )));
    }
    if b.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Argument("staleness indicators must be 0 or 1".into()));
    }
    let (rows, d) = y_eff.shape();
    let mut obs = DMatrix::zeros(rows, d);
    for i in 0..d {
        if rows == 0 {
            break;
        }
        obs[(0, i)] = y_eff[(0, i)];
        for j in 1..rows {
            obs[(j, i)] = if b[(j, i)] == 1.0 {
                obs[(j - 1, i)]
            } else {
                y_eff[(j, i)]
            };
        }
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn banded_structure() {
        let m = banded_correlation(12, 0.4);
        for i in 0..12 {
            assert_eq!(m[(i, i)], 1.0);
        }
        assert_eq!(m[(0, 6)], 0.0);
        assert!((m[(3, 5)] - 0.16).abs() < 1e-15);
        assert!((m[(2, 7)] - 0.4f64.powi(5)).abs() < 1e-15);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn drawn_rho_in_range() {
        let mut rng = substream(5, 0, Stream::Correlation);
        let (m, rho) = build_banded_correlation(30, RhoMode::Shared, &mut rng).unwrap();
        assert!((0.0..0.4).contains(&rho));
        assert_eq!(m, m.transpose());
        let (pp, _) = build_banded_correlation(30, RhoMode::PerPair, &mut rng).unwrap();
        assert_eq!(pp, pp.transpose());
        assert_eq!(pp[(0, 6)], 0.0);
        assert!(build_banded_correlation(1, RhoMode::Shared, &mut rng).is_err());
    }

    #[test]
    fn staleness_recursion_examples() {
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let none = DMatrix::zeros(3, 1);
        assert_eq!(apply_staleness(&y, &none).unwrap(), y);
        let all = DMatrix::from_element(3, 1, 1.0);
        assert_eq!(apply_staleness(&y, &all).unwrap(), DMatrix::from_element(3, 1, 1.0));
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        let obs = apply_staleness(&y, &b).unwrap();
        assert_eq!(obs.as_slice(), &[1.0, 1.0, 3.0]);
        let bad = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, 0.0]);
        assert!(apply_staleness(&y, &bad).is_err());
    }

    fn constant_paths(n: usize, d: usize, sys: &[f64], idio: f64) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        (
            sys.iter().map(|&s| DMatrix::from_element(n + 1, d, s)).collect(),
            DMatrix::from_element(n + 1, d, idio),
        )
    }

    #[test]
    fn zero_volatility_is_flat() {
        let (sys, idio) = constant_paths(100, 3, &[0.0], 0.0);
        let mut a = substream(6, 0, Stream::SystematicPrice);
        let mut b = substream(6, 0, Stream::IdiosyncraticPrice);
        let draw = simulate_prices(0.01, &sys, &idio, &banded_correlation(3, 0.3), &mut a, &mut b).unwrap();
        assert!(draw.y_eff.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quadratic_variation_single_factor() {
        let n = 20_000;
        let delta = 1.0 / n as f64;
        let s = 0.7;
        let (sys, idio) = constant_paths(n, 2, &[s], 0.0);
        let mut a = substream(7, 0, Stream::SystematicPrice);
        let mut b = substream(7, 0, Stream::IdiosyncraticPrice);
        let draw = simulate_prices(delta, &sys, &idio, &DMatrix::identity(2, 2), &mut a, &mut b).unwrap();
        let col = draw.y_eff.column(0);
        let qv: f64 = (1..=n).map(|j| (col[j] - col[j - 1]).powi(2)).sum();
        let target = s * s; // T = 1
        assert!((qv / target - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
        assert!((draw.sigma_c[(0, 0)] - target).abs() < 1e-12);
    }

    #[test]
    fn cross_covariation_matches_truth() {
        let n = 40_000;
        let delta = 1.0 / n as f64;
        let (sys, idio) = constant_paths(n, 3, &[0.5, 0.3], 0.4);
        let rho = banded_correlation(3, 0.35);
        let mut a = substream(8, 0, Stream::SystematicPrice);
        let mut b = substream(8, 0, Stream::IdiosyncraticPrice);
        let draw = simulate_prices(delta, &sys, &idio, &rho, &mut a, &mut b).unwrap();
        let truth = &draw.sigma_c + &draw.sigma_e;
        for (i, m) in [(0, 1), (0, 2), (1, 2)] {
            let rc: f64 = (1..=n)
                .map(|j| (draw.y_eff[(j, i)] - draw.y_eff[(j - 1, i)]) * (draw.y_eff[(j, m)] - draw.y_eff[(j - 1, m)]))
                .sum();
            let sd = ((truth[(i, i)] * truth[(m, m)] + truth[(i, m)].powi(2)) / n as f64).sqrt();
            assert!(
                (rc - truth[(i, m)]).abs() < 5.0 * sd,
                "{i}{m}: {rc} vs {}",
                truth[(i, m)]
            );
        }
    }

    #[test]
    fn rejects_indefinite_correlation() {
        let (sys, idio) = constant_paths(10, 3, &[0.1], 0.1);
        let mut bad = DMatrix::identity(3, 3);
        bad[(0, 1)] = 0.99;
        bad[(1, 0)] = 0.99;
        bad[(1, 2)] = 0.99;
        bad[(2, 1)] = 0.99;
        bad[(0, 2)] = -0.99;
        bad[(2, 0)] = -0.99;
        let mut a = substream(9, 0, Stream::SystematicPrice);
        let mut b = substream(9, 0, Stream::IdiosyncraticPrice);
        assert!(matches!(
            simulate_prices(0.1, &sys, &idio, &bad, &mut a, &mut b),
            Err(Error::Degenerate(_))
        ));
    }
}
