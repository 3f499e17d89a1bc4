//! Mean-reverting covariate and staleness-factor paths.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::SimConfig;
use crate::error::{Error, Result};

/// Which of the two mean-reverting families a path belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OuRole {
    Covariate,
    StalenessFactor,
}

/// Per-component (κ, μ, σ) of an Ornstein-Uhlenbeck vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OuParams {
    pub kappa: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl OuParams {
    /// Coefficient tables of the simulation design, indexed l = 1..=dim.
    ///
    /// The covariate volatility is scaled by r_g, as printed in the design.
    pub fn for_role(role: OuRole, r_x: usize, r_g: usize) -> Self {
        match role {
            OuRole::Covariate => {
                let rx = r_x as f64;
                let rg = r_g as f64;
                let ls = (1..=r_x).map(|l| l as f64);
                OuParams {
                    kappa: ls.clone().map(|l| 1.0 + l / (10.0 * rx)).collect(),
                    mu: ls.clone().map(|l| -0.01 + l / (2.0 * rx)).collect(),
                    sigma: ls.map(|l| 0.5 + l / (10.0 * rg)).collect(),
                }
            }
            OuRole::StalenessFactor => {
                let rg = r_g as f64;
                let ls = (1..=r_g).map(|l| l as f64);
                OuParams {
                    kappa: ls.clone().map(|l| 0.5 + 2.0 * l / rg).collect(),
                    mu: ls.clone().map(|l| -0.03 + l / (2.0 * rg)).collect(),
                    sigma: ls.map(|l| 1.0 + l / (5.0 * rg)).collect(),
                }
            }
        }
    }
}

/// One OU path of `steps + 1` points sampled with the exact Gaussian transition.
///
/// When `x0` is `None` the start is drawn from the stationary law N(μ, σ²/(2κ)).
pub fn simulate_ou<R: Rng + ?Sized>(
    kappa: f64,
    mu: f64,
    sigma: f64,
    x0: Option<f64>,
    steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::Argument(format!(
            "OU mean reversion κ = {kappa} must be positive"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("OU step {dt} must be positive")));
    }
    let decay = (-kappa * dt).exp();
    let step_sd = sigma * ((1.0 - (-2.0 * kappa * dt).exp()) / (2.0 * kappa)).sqrt();
    let mut path = Vec::with_capacity(steps + 1);
    let start = match x0 {
        Some(x) => x,
        None => {
            let xi: f64 = rng.sample(StandardNormal);
            mu + sigma / (2.0 * kappa).sqrt() * xi
        }
    };
    path.push(start);
    let mut x = start;
    for _ in 0..steps {
        let xi: f64 = rng.sample(StandardNormal);
        x = mu + (x - mu) * decay + step_sd * xi;
        path.push(x);
    }
    Ok(path)
}

/// Paths for one role on the state clock.
///
/// Covariates: `r_x` matrices of shape (n+1) × d, one independent path per asset.
/// Staleness factors: a single (n+1) × r_g matrix.
pub fn simulate_ou_panel<R: Rng + ?Sized>(config: &SimConfig, role: OuRole, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    let params = OuParams::for_role(role, config.r_x, config.r_g);
    let n = config.n;
    let dt = config.state_delta;
    match role {
        OuRole::Covariate => {
            let mut out = Vec::with_capacity(config.r_x);
            for l in 0..config.r_x {
                let mut m = DMatrix::zeros(n + 1, config.d);
                for i in 0..config.d {
                    let path = simulate_ou(params.kappa[l], params.mu[l], params.sigma[l], None, n, dt, rng)?;
                    m.column_mut(i).copy_from_slice(&path);
                }
                out.push(m);
            }
            Ok(out)
        }
        OuRole::StalenessFactor => {
            let mut m = DMatrix::zeros(n + 1, config.r_g);
            for l in 0..config.r_g {
                let path = simulate_ou(params.kappa[l], params.mu[l], params.sigma[l], None, n, dt, rng)?;
                m.column_mut(l).copy_from_slice(&path);
            }
            Ok(vec![m])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn coefficient_tables() {
        let p = OuParams::for_role(OuRole::Covariate, 1, 3);
        assert!((p.kappa[0] - 1.1).abs() < 1e-15);
        assert!((p.mu[0] - 0.49).abs() < 1e-15);
        assert!((p.sigma[0] - (0.5 + 1.0 / 30.0)).abs() < 1e-15);
        let g = OuParams::for_role(OuRole::StalenessFactor, 1, 3);
        assert!((g.kappa[0] - (0.5 + 2.0 / 3.0)).abs() < 1e-15);
        assert!((g.kappa[2] - 2.5).abs() < 1e-15);
        assert!((g.mu[2] - 0.47).abs() < 1e-15);
        assert!((g.sigma[2] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        let mut rng = substream(1, 0, Stream::Auxiliary);
        assert!(simulate_ou(0.0, 0.0, 1.0, None, 10, 0.1, &mut rng).is_err());
        assert!(simulate_ou(-1.0, 0.0, 1.0, None, 10, 0.1, &mut rng).is_err());
    }

    #[test]
    fn huge_kappa_collapses_to_mean() {
        let mut rng = substream(2, 0, Stream::Auxiliary);
        let path = simulate_ou(1e6, 0.7, 1.0, None, 10_000, 0.01, &mut rng).unwrap();
        let mean = path.iter().sum::<f64>() / path.len() as f64;
        assert!((mean - 0.7).abs() < 1e-2);
    }

    #[test]
    fn noiseless_path_is_deterministic_relaxation() {
        let mut rng = substream(3, 0, Stream::Auxiliary);
        let (kappa, mu, x0, dt) = (2.0, 0.5, 3.0, 0.01);
        let path = simulate_ou(kappa, mu, 0.0, Some(x0), 200, dt, &mut rng).unwrap();
        for (j, x) in path.iter().enumerate() {
            let exact = mu + (x0 - mu) * (-kappa * dt * j as f64).exp();
            assert!((x - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_variance() {
        let mut rng = substream(4, 0, Stream::Auxiliary);
        let (kappa, sigma) = (1.3, 0.8);
        let path = simulate_ou(kappa, -0.2, sigma, None, 100_000, 0.5, &mut rng).unwrap();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = sigma * sigma / (2.0 * kappa);
        assert!((var / target - 1.0).abs() < 0.05, "{var} vs {target}");
    }
}
