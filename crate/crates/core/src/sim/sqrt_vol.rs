//! Square-root (CIR-type) spot variance paths for the efficient price.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SimConfig;

/// Coefficients of d v = c (a − v) dt + s0 √v dW with start v0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtVolParams {
    pub level: f64,
    pub speed: f64,
    pub vol_of_vol: f64,
    pub v0: f64,
}

impl SqrtVolParams {
    /// Systematic loading `l` (1-based) of asset `i` (1-based) among `d`.
    ///
    /// Factors beyond the third reuse the coefficient rows cyclically.
    pub fn systematic(l: usize, i: usize, d: usize) -> Self {
        let u = i as f64 / d as f64;
        match (l - 1) % 3 {
            0 => SqrtVolParams {
                level: 0.5 + u,
                speed: 0.03 + u / 100.0,
                vol_of_vol: 0.15 + u / 10.0,
                v0: 0.04,
            },
            1 => SqrtVolParams {
                level: 0.75 + u,
                speed: 0.05 + u / 100.0,
                vol_of_vol: 0.2 + u / 10.0,
                v0: 0.04,
            },
            _ => SqrtVolParams {
                level: 0.6 + u,
                speed: 0.08 + u / 100.0,
                vol_of_vol: 0.2 + u / 10.0,
                v0: 0.03,
            },
        }
    }

    /// Idiosyncratic volatility of asset `i` (1-based) among `d`.
    pub fn idiosyncratic(i: usize, d: usize) -> Self {
        let u = i as f64 / d as f64;
        SqrtVolParams {
            level: 0.25 + u,
            speed: 0.08 + u / 100.0,
            vol_of_vol: 0.2 + u / 10.0,
            v0: 0.03,
        }
    }
}

/// Full-truncation Euler path of the variance; returns σ = √(v⁺) at `steps + 1` points.
pub fn simulate_sqrt_variance<R: Rng + ?Sized>(params: SqrtVolParams, steps: usize, dt: f64, rng: &mut R) -> Vec<f64> {
    let sqrt_dt = dt.sqrt();
    let mut v = params.v0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(v.max(0.0).sqrt());
    for _ in 0..steps {
        let vp = v.max(0.0);
        let xi: f64 = rng.sample(StandardNormal);
        v += params.speed * (params.level - vp) * dt + params.vol_of_vol * vp.sqrt() * sqrt_dt * xi;
        out.push(v.max(0.0).sqrt());
    }
    out
}

/// Spot volatility paths for all assets.
///
/// Returns `r` systematic matrices of shape (n+1) × d (σ^l) and the
/// (n+1) × d idiosyncratic matrix σ*.
pub fn simulate_sqrt_vol<R: Rng + ?Sized>(
    config: &SimConfig,
    rng_sys: &mut R,
    rng_idio: &mut R,
) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let (n, d) = (config.n, config.d);
    let mut sys = Vec::with_capacity(config.r);
    for l in 1..=config.r {
        let mut m = DMatrix::zeros(n + 1, d);
        for i in 1..=d {
            let path = simulate_sqrt_variance(SqrtVolParams::systematic(l, i, d), n, config.delta, rng_sys);
            m.column_mut(i - 1).copy_from_slice(&path);
        }
        sys.push(m);
    }
    let mut idio = DMatrix::zeros(n + 1, d);
    for i in 1..=d {
        let path = simulate_sqrt_variance(SqrtVolParams::idiosyncratic(i, d), n, config.delta, rng_idio);
        idio.column_mut(i - 1).copy_from_slice(&path);
    }
    (sys, idio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, substream_raw, Stream};

    #[test]
    fn coefficient_rows_at_ends() {
        let d = 100;
        let first = SqrtVolParams::systematic(1, 1, d);
        assert!((first.level - 0.51).abs() < 1e-15);
        assert!((first.speed - 0.0301).abs() < 1e-15);
        assert!((first.vol_of_vol - 0.151).abs() < 1e-15);
        let last = SqrtVolParams::systematic(2, d, d);
        assert!((last.level - 1.75).abs() < 1e-15);
        assert!((last.speed - 0.06).abs() < 1e-15);
        assert!((last.vol_of_vol - 0.3).abs() < 1e-15);
        let third = SqrtVolParams::systematic(3, d, d);
        assert!((third.level - 1.6).abs() < 1e-15);
        assert_eq!(third.v0, 0.03);
        let idio = SqrtVolParams::idiosyncratic(d, d);
        assert!((idio.level - 1.25).abs() < 1e-15);
        assert!((idio.speed - 0.09).abs() < 1e-15);
        assert!((SqrtVolParams::idiosyncratic(1, d).vol_of_vol - 0.201).abs() < 1e-15);
    }

    #[test]
    fn noiseless_fixed_point_is_constant() {
        let mut rng = substream(9, 0, Stream::Auxiliary);
        let p = SqrtVolParams {
            level: 0.3,
            speed: 2.0,
            vol_of_vol: 0.0,
            v0: 0.3,
        };
        let path = simulate_sqrt_variance(p, 500, 0.01, &mut rng);
        for s in path {
            assert!((s * s - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn long_run_mean_of_variance() {
        let mut rng = substream(10, 0, Stream::Auxiliary);
        let p = SqrtVolParams::systematic(1, 1, 100);
        let path = simulate_sqrt_variance(p, 100_000, 1.0, &mut rng);
        let mean = path.iter().map(|s| s * s).sum::<f64>() / path.len() as f64;
        assert!((mean / p.level - 1.0).abs() < 0.10, "{mean}");
    }

    #[test]
    fn never_negative() {
        for rep in 0..200u64 {
            let mut rng = substream_raw(11, rep, 0);
            let p = SqrtVolParams {
                level: 0.01,
                speed: 0.5,
                vol_of_vol: 1.5,
                v0: 0.01,
            };
            let path = simulate_sqrt_variance(p, 200, 0.05, &mut rng);
            assert!(path.iter().all(|s| *s >= 0.0 && s.is_finite()));
        }
    }
}
