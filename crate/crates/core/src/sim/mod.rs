//! Synthetic high-frequency world: covariates, staleness factors, Bernoulli
//! staleness indicators, stochastic-volatility efficient prices and the
//! stale observed prices, with the ground truth kept for evaluation.

mod ou;
mod prices;
mod sqrt_vol;
mod staleness;

pub use ou::{simulate_ou, simulate_ou_panel, OuParams, OuRole};
pub use prices::{
    apply_staleness, banded_correlation, build_banded_correlation, simulate_prices, PriceDraw, RhoMode, BAND,
};
pub use sqrt_vol::{simulate_sqrt_variance, simulate_sqrt_vol, SqrtVolParams};
pub use staleness::{draw_loadings, simulate_staleness, single_index, staleness_from_loadings, StalenessDraw};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::rng::{substream, Stream};
use crate::vol::stale_factor;

/// Trading minutes per day.
pub const MINUTES_PER_DAY: f64 = 390.0;
/// Trading days per year.
pub const DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Number of assets.
    pub d: usize,
    /// Number of increments; every path has n + 1 points.
    pub n: usize,
    /// Price mesh Δ_n in years (T = n Δ_n).
    pub delta: f64,
    /// Mesh of the covariate and staleness-factor clock (one unit = one trading day).
    pub state_delta: f64,
    pub r_x: usize,
    pub r_g: usize,
    /// Number of price factors.
    pub r: usize,
    pub link: LinkKind,
    pub seed: u64,
    pub replications: usize,
    pub rho_mode: RhoMode,
    /// Fixes the band parameter instead of drawing it.
    pub rho: Option<f64>,
}

impl Default for SimConfig {
    /// One-minute sampling over three trading days.
    fn default() -> Self {
        SimConfig {
            d: 100,
            n: 1170,
            delta: 1.0 / (DAYS_PER_YEAR * MINUTES_PER_DAY),
            state_delta: 1.0 / MINUTES_PER_DAY,
            r_x: 1,
            r_g: 3,
            r: 3,
            link: LinkKind::Logit,
            seed: 20_240_917,
            replications: 20,
            rho_mode: RhoMode::Shared,
            rho: None,
        }
    }
}

impl SimConfig {
    /// Same horizon sampled with `n` increments instead.
    pub fn with_increments(mut self, n: usize) -> Self {
        let horizon = self.delta * self.n as f64;
        let state_horizon = self.state_delta * self.n as f64;
        self.delta = horizon / n as f64;
        self.state_delta = state_horizon / n as f64;
        self.n = n;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.delta * self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::validation(format!("sim.{field}"), reason))
            }
        };
        check(self.d >= 2, "d", "need at least 2 assets")?;
        check(self.n >= 2, "n", "need at least 2 increments")?;
        check(self.r >= 1, "r", "need at least one price factor")?;
        check(self.r_x >= 1, "r_x", "need at least one covariate")?;
        check(self.r_g >= 1, "r_g", "need at least one staleness factor")?;
        check(self.delta > 0.0 && self.delta.is_finite(), "delta", "must be positive")?;
        check(
            self.state_delta > 0.0 && self.state_delta.is_finite(),
            "state_delta",
            "must be positive",
        )?;
        check(self.replications >= 1, "replications", "must be at least 1")?;
        if let Some(rho) = self.rho {
            check((0.0..1.0).contains(&rho), "rho", "must lie in [0, 1)")?;
        }
        Ok(())
    }
}

/// Observed data: staleness indicators, covariates and prices on a uniform grid.
#[derive(Debug, Clone)]
pub struct Panel {
    /// (n+1) × d indicators, 1 = stale.
    pub b: DMatrix<f64>,
    /// One (n+1) × d matrix per covariate.
    pub x: Vec<DMatrix<f64>>,
    /// Observed log prices, (n+1) × d.
    pub y_obs: Option<DMatrix<f64>>,
    /// Efficient log prices; only available for simulated data.
    pub y_eff: Option<DMatrix<f64>>,
    /// Mesh of the time grid t_j = j Δ_n.
    pub delta: f64,
}

impl Panel {
    pub fn n(&self) -> usize {
        self.b.nrows() - 1
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn r_x(&self) -> usize {
        self.x.len()
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.b.nrows()).map(|j| j as f64 * self.delta).collect()
    }

    pub fn is_stale(&self, j: usize, i: usize) -> bool {
        self.b[(j, i)] == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.b.shape();
        if shape.0 < 2 || shape.1 < 1 {
            return Err(Error::Shape(format!("indicator matrix {shape:?} too small")));
        }
        if self.x.is_empty() {
            return Err(Error::Input("panel has no covariates".into()));
        }
        for (l, x) in self.x.iter().enumerate() {
            if x.shape() != shape {
                return Err(Error::Shape(format!(
                    "covariate {} has shape {:?}, expected {shape:?}",
                    l + 1,
                    x.shape()
                )));
            }
        }
        for (name, m) in [("Y_obs", &self.y_obs), ("Y_eff", &self.y_eff)] {
            if let Some(m) = m {
                if m.shape() != shape {
                    return Err(Error::Shape(format!(
                        "{name} has shape {:?}, expected {shape:?}",
                        m.shape()
                    )));
                }
            }
        }
        if let Some((k, _)) = self.b.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::Input(format!(
                "B row {} column {} is not binary",
                k % shape.0,
                k / shape.0
            )));
        }
        Ok(())
    }

    /// Rows `start..=start + len`, re-based so the window starts at time 0.
    pub fn window(&self, start: usize, len: usize) -> Panel {
        let rows = |m: &DMatrix<f64>| m.rows(start, len + 1).into_owned();
        Panel {
            b: rows(&self.b),
            x: self.x.iter().map(rows).collect(),
            y_obs: self.y_obs.as_ref().map(rows),
            y_eff: self.y_eff.as_ref().map(rows),
            delta: self.delta,
        }
    }
}

/// Ground truth retained by the simulator.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub g_path: DMatrix<f64>,
    pub z_path: DMatrix<f64>,
    pub p_path: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// One (n+1) × d matrix per price factor: σ^l_{i t_j}.
    pub sigma_sys: Vec<DMatrix<f64>>,
    /// (n+1) × d idiosyncratic spot volatilities σ*.
    pub sigma_idio: DMatrix<f64>,
    pub rho_star: DMatrix<f64>,
    /// Shared band parameter (NaN in per-pair mode).
    pub rho: f64,
    pub sigma_c: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
    pub delta: f64,
}

impl SimTruth {
    pub fn d(&self) -> usize {
        self.sigma_idio.ncols()
    }

    pub fn n(&self) -> usize {
        self.sigma_idio.nrows() - 1
    }

    /// V^c at grid index j.
    pub fn spot_systematic(&self, j: usize) -> DMatrix<f64> {
        let d = self.d();
        let loadings = DMatrix::from_fn(d, self.sigma_sys.len(), |i, l| self.sigma_sys[l][(j, i)]);
        &loadings * loadings.transpose()
    }

    /// V^e at grid index j.
    pub fn spot_idiosyncratic(&self, j: usize) -> DMatrix<f64> {
        let s = self.sigma_idio.row(j);
        DMatrix::from_fn(self.d(), self.d(), |i, m| s[i] * self.rho_star[(i, m)] * s[m])
    }

    pub fn spot_total(&self, j: usize) -> DMatrix<f64> {
        self.spot_systematic(j) + self.spot_idiosyncratic(j)
    }

    pub fn integrated_total(&self) -> DMatrix<f64> {
        &self.sigma_c + &self.sigma_e
    }

    /// V_j ∘ P_j: the co-volatilities shrunk by staleness at grid index j.
    pub fn stale_spot_target(&self, j: usize) -> DMatrix<f64> {
        let mut v = self.spot_total(j);
        let p = self.p_path.row(j);
        for i in 0..v.nrows() {
            for m in 0..v.ncols() {
                if i != m {
                    v[(i, m)] *= stale_factor(p[i], p[m]);
                }
            }
        }
        v
    }

    /// Σ^{(p)} = Σ_j (V_j ∘ P_j) Δ over left points.
    pub fn stale_integrated_target(&self) -> DMatrix<f64> {
        let d = self.d();
        let mut acc = DMatrix::zeros(d, d);
        for j in 0..self.n() {
            acc += self.stale_spot_target(j) * self.delta;
        }
        acc
    }

    /// Rows `start..=start + len` of every path; integrated matrices recomputed.
    pub fn window(&self, start: usize, len: usize) -> SimTruth {
        let rows = |m: &DMatrix<f64>| m.rows(start, len + 1).into_owned();
        let sigma_sys: Vec<_> = self.sigma_sys.iter().map(rows).collect();
        let sigma_idio = rows(&self.sigma_idio);
        let d = self.d();
        let mut sigma_c = DMatrix::zeros(d, d);
        for s in &sigma_sys {
            let head = s.rows(0, len);
            sigma_c += head.transpose() * head * self.delta;
        }
        let head = sigma_idio.rows(0, len);
        let sigma_e = (head.transpose() * head * self.delta).component_mul(&self.rho_star);
        SimTruth {
            g_path: rows(&self.g_path),
            z_path: rows(&self.z_path),
            p_path: rows(&self.p_path),
            a: self.a.clone(),
            gamma: self.gamma.clone(),
            sigma_sys,
            sigma_idio,
            rho_star: self.rho_star.clone(),
            rho: self.rho,
            sigma_c,
            sigma_e,
            delta: self.delta,
        }
    }
}

/// Simulate one replication of the full design.
pub fn simulate_world(config: &SimConfig, replication: u64) -> Result<(Panel, SimTruth)> {
    config.validate()?;
    let seed = config.seed;
    let mut rng_x = substream(seed, replication, Stream::Covariate);
    let mut rng_g = substream(seed, replication, Stream::StalenessFactor);
    let x = simulate_ou_panel(config, OuRole::Covariate, &mut rng_x)?;
    let g = simulate_ou_panel(config, OuRole::StalenessFactor, &mut rng_g)?
        .pop()
        .expect("factor panel");

    let mut rng_load = substream(seed, replication, Stream::Loadings);
    let mut rng_b = substream(seed, replication, Stream::Bernoulli);
    let stale = simulate_staleness(config.link, &x, &g, &mut rng_load, &mut rng_b)?;

    let mut rng_vs = substream(seed, replication, Stream::SystematicVol);
    let mut rng_vi = substream(seed, replication, Stream::IdiosyncraticVol);
    let (sigma_sys, sigma_idio) = simulate_sqrt_vol(config, &mut rng_vs, &mut rng_vi);

    let mut rng_rho = substream(seed, replication, Stream::Correlation);
    let (rho_star, rho) = match config.rho {
        Some(rho) => (banded_correlation(config.d, rho), rho),
        None => build_banded_correlation(config.d, config.rho_mode, &mut rng_rho)?,
    };

    let mut rng_ps = substream(seed, replication, Stream::SystematicPrice);
    let mut rng_pi = substream(seed, replication, Stream::IdiosyncraticPrice);
    let prices = simulate_prices(
        config.delta,
        &sigma_sys,
        &sigma_idio,
        &rho_star,
        &mut rng_ps,
        &mut rng_pi,
    )?;
    let y_obs = apply_staleness(&prices.y_eff, &stale.b)?;

    let panel = Panel {
        b: stale.b,
        x,
        y_obs: Some(y_obs),
        y_eff: Some(prices.y_eff),
        delta: config.delta,
    };
    let truth = SimTruth {
        g_path: g,
        z_path: stale.z,
        p_path: stale.p,
        a: stale.a,
        gamma: stale.gamma,
        sigma_sys,
        sigma_idio,
        rho_star,
        rho,
        sigma_c: prices.sigma_c,
        sigma_e: prices.sigma_e,
        delta: config.delta,
    };
    Ok((panel, truth))
}
