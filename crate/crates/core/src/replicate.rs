//! Monte Carlo replication of the simulation study: summary-table metrics, the
//! two-window portfolio experiment and the convergence-trend grid.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, TableRow};
use crate::error::{Error, Result};
use crate::linalg::{relative_frobenius, spectral_norm_sym, sym_eigen_desc, symmetrize};
use crate::link::LinkKind;
use crate::portfolio::{min_variance_path, oos_evaluate, returns_from_prices};
use crate::sfm::{fit, select_r_g, variance_p, SfmFit};
use crate::sim::{simulate_world, Panel, SimConfig, SimTruth, DAYS_PER_YEAR, MINUTES_PER_DAY};
use crate::vol::{estimate, total_and_precision, RankChoice, VolEstimates, VolSet};

/// Run `f` on a pool of `jobs` workers (all cores when absent).
pub fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Argument(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Simulation settings for one table row; the horizon of `base` is kept.
pub fn row_config(base: &SimConfig, row: &TableRow) -> SimConfig {
    let mut cfg = SimConfig {
        d: row.d,
        link: row.link,
        ..base.clone()
    };
    if row.n != cfg.n {
        cfg = cfg.with_increments(row.n);
    }
    cfg
}

/// Sampling interval label such as `1min` or `30s`.
pub fn frequency_label(delta_years: f64) -> String {
    let seconds = delta_years * DAYS_PER_YEAR * MINUTES_PER_DAY * 60.0;
    let minutes = seconds / 60.0;
    if (minutes - minutes.round()).abs() < 1e-6 && minutes >= 1.0 {
        format!("{}min", minutes.round() as u64)
    } else {
        format!("{}s", (seconds * 1e3).round() / 1e3)
    }
}

/// Root mean square difference between two equally shaped matrices.
pub fn rmse(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

/// Share of cells whose nominal 95% interval covers the true probability.
pub fn coverage_rate(fit: &SfmFit, panel: &Panel, p_true: &DMatrix<f64>) -> Result<f64> {
    let var = variance_p(fit, panel)?;
    let (rows, d) = p_true.shape();
    let mut hits = 0usize;
    for j in 0..rows {
        for i in 0..d {
            let (lo, hi) = var.interval(fit.p_hat[(j, i)], j, i);
            if lo <= p_true[(j, i)] && p_true[(j, i)] <= hi {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (rows * d) as f64)
}

/// Fit at the configured factor count; `auto` uses the selector first.
fn fit_configured(cfg: &RunConfig, panel: &Panel, link: LinkKind, selected: Option<usize>) -> Result<SfmFit> {
    let r_g = match cfg.sfm.r_g {
        RankChoice::Fixed(k) => k,
        RankChoice::Auto(_) => match selected {
            Some(k) => k,
            None => select_factor_count(cfg, panel, link)?,
        },
    };
    fit(panel, link, r_g, &cfg.sfm.fit_options())
}

/// Fit once at r_g_max and apply the perturbed eigenvalue ratio rule to Γ̂Ĝ'.
pub fn select_factor_count(cfg: &RunConfig, panel: &Panel, link: LinkKind) -> Result<usize> {
    let r_max = cfg.sfm.r_g_max.min(panel.d());
    let f = fit(panel, link, r_max, &cfg.sfm.fit_options())?;
    let common = &f.gamma_hat * f.g_hat.transpose();
    Ok(select_r_g(&common, &cfg.sfm.selection_options())?.r_g)
}

/// Summary-table metrics of one replication.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicationMetrics {
    pub d: usize,
    pub n: usize,
    pub link: LinkKind,
    pub replication: u64,
    pub r_g_hat: usize,
    pub correct: bool,
    pub rmse_z: f64,
    pub mean_abs_p: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub loglik_monotone: bool,
    /// ‖Γ̂'Γ̂/d − I‖_F after the fit.
    pub gamma_gram_error: f64,
    /// Largest off-diagonal of ΔĜ'ΔĜ/(n+1).
    pub delta_g_offdiag: f64,
    /// ‖V̂_t − V_t‖_{V_t} averaged over block anchors, efficient prices.
    pub spot_clean: f64,
    /// ‖Σ̂ − Σ‖ (spectral), efficient prices.
    pub int_clean: f64,
    pub spot_stale_vs_p: f64,
    pub int_stale_vs_p: f64,
    pub spot_stale: f64,
    pub int_stale: f64,
    pub spot_corrected: f64,
    pub int_corrected: f64,
    /// ‖Σ̂ − Σ‖/‖Σ‖ for the uncorrected and corrected stale estimates.
    pub int_stale_rel: f64,
    pub int_corrected_rel: f64,
}

pub fn gamma_gram_error(f: &SfmFit) -> f64 {
    let (d, r) = f.gamma_hat.shape();
    (f.gamma_hat.transpose() * &f.gamma_hat / d as f64 - DMatrix::<f64>::identity(r, r)).norm()
}

pub fn delta_g_offdiag(f: &SfmFit) -> f64 {
    let (rows, r) = f.delta_g_hat.shape();
    let m = f.delta_g_hat.transpose() * &f.delta_g_hat / rows as f64;
    let mut worst = 0.0f64;
    for p in 0..r {
        for q in 0..r {
            if p != q {
                worst = worst.max(m[(p, q)].abs());
            }
        }
    }
    worst
}

/// Truth restricted to the rows covered by complete blocks.
fn covered(truth: &SimTruth, est: &VolEstimates) -> SimTruth {
    truth.window(0, est.anchors.len() * est.k_n)
}

fn total_spot_error(set: &VolSet, est: &VolEstimates, target: impl Fn(usize) -> DMatrix<f64>) -> Result<f64> {
    let mut acc = 0.0;
    for (k, &anchor) in est.anchors.iter().enumerate() {
        acc += relative_frobenius(&set.total_spot(k), &target(anchor))?;
    }
    Ok(acc / est.anchors.len() as f64)
}

/// Simulate, fit and evaluate one replication of a table row.
pub fn run_replication(cfg: &RunConfig, row: &TableRow, replication: u64) -> Result<ReplicationMetrics> {
    let sim = row_config(&cfg.sim, row);
    let (panel, truth) = simulate_world(&sim, replication)?;
    let link = cfg.sfm.link.unwrap_or(row.link);

    let r_g_hat = select_factor_count(cfg, &panel, link)?;
    let f = fit_configured(cfg, &panel, link, Some(r_g_hat))?;
    let monotone = f.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10 * w[0].abs());

    let y_eff = panel
        .y_eff
        .as_ref()
        .ok_or_else(|| Error::Input("panel has no efficient prices".into()))?;
    let y_obs = panel
        .y_obs
        .as_ref()
        .ok_or_else(|| Error::Input("panel has no observed prices".into()))?;
    let clean = estimate(y_eff, panel.delta, &cfg.vol, None)?;
    let stale = estimate(y_obs, panel.delta, &cfg.vol, Some(&f.p_hat))?;
    let corrected = stale.corrected.as_ref().expect("correction requested");

    let window = covered(&truth, &stale);
    let sigma = window.integrated_total();
    let sigma_p = window.stale_integrated_target();
    let sigma_norm = spectral_norm_sym(&sigma);
    let spec = |a: &DMatrix<f64>, b: &DMatrix<f64>| spectral_norm_sym(&(a - b));

    Ok(ReplicationMetrics {
        d: row.d,
        n: row.n,
        link: row.link,
        replication,
        r_g_hat,
        correct: r_g_hat == sim.r_g,
        rmse_z: rmse(&f.z_hat, &truth.z_path),
        mean_abs_p: (&f.p_hat - &truth.p_path).abs().mean(),
        iterations: f.iterations,
        converged: f.converged,
        gradient_norm: f.gradient_norm,
        loglik_monotone: monotone,
        gamma_gram_error: gamma_gram_error(&f),
        delta_g_offdiag: delta_g_offdiag(&f),
        spot_clean: total_spot_error(&clean.raw, &clean, |j| truth.spot_total(j))?,
        int_clean: spec(&clean.raw.total_int, &covered(&truth, &clean).integrated_total()),
        spot_stale_vs_p: total_spot_error(&stale.raw, &stale, |j| truth.stale_spot_target(j))?,
        int_stale_vs_p: spec(&stale.raw.total_int, &sigma_p),
        spot_stale: total_spot_error(&stale.raw, &stale, |j| truth.spot_total(j))?,
        int_stale: spec(&stale.raw.total_int, &sigma),
        spot_corrected: total_spot_error(corrected, &stale, |j| truth.spot_total(j))?,
        int_corrected: spec(&corrected.total_int, &sigma),
        int_stale_rel: spec(&stale.raw.total_int, &sigma) / sigma_norm,
        int_corrected_rel: spec(&corrected.total_int, &sigma) / sigma_norm,
    })
}

/// Column means of one table row.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Row {
    pub d: usize,
    pub link: LinkKind,
    pub freq: String,
    pub replications: usize,
    pub pc: f64,
    pub rmse_z: f64,
    pub spot_clean: f64,
    pub int_clean: f64,
    pub spot_stale_vs_p: f64,
    pub int_stale_vs_p: f64,
    pub spot_stale: f64,
    pub int_stale: f64,
    pub spot_corrected: f64,
    pub int_corrected: f64,
}

impl Table1Row {
    pub fn summarize(row: &TableRow, freq: String, reps: &[ReplicationMetrics]) -> Self {
        let m = |f: fn(&ReplicationMetrics) -> f64| reps.iter().map(f).sum::<f64>() / reps.len() as f64;
        Table1Row {
            d: row.d,
            link: row.link,
            freq,
            replications: reps.len(),
            pc: m(|r| if r.correct { 1.0 } else { 0.0 }),
            rmse_z: m(|r| r.rmse_z),
            spot_clean: m(|r| r.spot_clean),
            int_clean: m(|r| r.int_clean),
            spot_stale_vs_p: m(|r| r.spot_stale_vs_p),
            int_stale_vs_p: m(|r| r.int_stale_vs_p),
            spot_stale: m(|r| r.spot_stale),
            int_stale: m(|r| r.int_stale),
            spot_corrected: m(|r| r.spot_corrected),
            int_corrected: m(|r| r.int_corrected),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Table1 {
    pub rows: Vec<Table1Row>,
    pub replications: Vec<ReplicationMetrics>,
}

/// All configured rows, `sim.replications` each, in parallel over replications.
pub fn replicate_table1(cfg: &RunConfig) -> Result<Table1> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for row in &cfg.replicate.rows {
        let reps: Vec<ReplicationMetrics> = (0..cfg.sim.replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(cfg, row, rep))
            .collect::<Result<_>>()?;
        let freq = frequency_label(row_config(&cfg.sim, row).delta);
        rows.push(Table1Row::summarize(row, freq, &reps));
        all.extend(reps);
    }
    Ok(Table1 {
        rows,
        replications: all,
    })
}

/// Mean errors at one point of the convergence-trend grid.
#[derive(Debug, Clone, Serialize)]
pub struct RatePoint {
    pub d: usize,
    pub n: usize,
    pub replications: usize,
    pub mean_abs_p: f64,
    pub int_corrected_rel: f64,
    pub rmse_z: f64,
}

/// p̂ and corrected Σ̂ accuracy over `replicate.rate_grid` at the simulator's horizon.
pub fn rate_trend(cfg: &RunConfig) -> Result<Vec<RatePoint>> {
    cfg.validate()?;
    let link = cfg.fit_link();
    let r_g = cfg.sim.r_g;
    cfg.replicate
        .rate_grid
        .iter()
        .map(|&(d, n)| {
            let sim = row_config(
                &cfg.sim,
                &TableRow {
                    d,
                    n,
                    link: cfg.sim.link,
                },
            );
            let reps: Vec<(f64, f64, f64)> = (0..sim.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let (panel, truth) = simulate_world(&sim, rep)?;
                    let f = fit(&panel, link, r_g, &cfg.sfm.fit_options())?;
                    let y_obs = panel.y_obs.as_ref().expect("simulated panel has prices");
                    let est = estimate(y_obs, panel.delta, &cfg.vol, Some(&f.p_hat))?;
                    let sigma = covered(&truth, &est).integrated_total();
                    let corr = &est.corrected.as_ref().expect("correction requested").total_int;
                    let rel = spectral_norm_sym(&(corr - &sigma)) / spectral_norm_sym(&sigma);
                    Ok((
                        (&f.p_hat - &truth.p_path).abs().mean(),
                        rel,
                        rmse(&f.z_hat, &truth.z_path),
                    ))
                })
                .collect::<Result<_>>()?;
            let k = reps.len() as f64;
            Ok(RatePoint {
                d,
                n,
                replications: reps.len(),
                mean_abs_p: reps.iter().map(|r| r.0).sum::<f64>() / k,
                int_corrected_rel: reps.iter().map(|r| r.1).sum::<f64>() / k,
                rmse_z: reps.iter().map(|r| r.2).sum::<f64>() / k,
            })
        })
        .collect()
}

/// Estimator tags compared in the portfolio experiment.
pub const PORTFOLIO_TAGS: [&str; 4] = ["uncorrected_sv", "uncorrected_iv", "corrected_sv", "corrected_iv"];

/// Objective and realized risk of one (estimator, c) pair.
#[derive(Debug, Clone, Serialize)]
pub struct PortfolioPoint {
    pub replication: u64,
    pub estimator: String,
    pub c: f64,
    pub objective: f64,
    pub oos_risk: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PortfolioReplication {
    pub replication: u64,
    pub equal_weight_risk: f64,
    pub points: Vec<PortfolioPoint>,
}

/// Shift by δI, δ = |λ_min| + 1e-8, when the smallest eigenvalue is at most 1e-10.
pub fn repair_pd(m: &DMatrix<f64>) -> (DMatrix<f64>, Option<f64>) {
    let m = symmetrize(m);
    let (vals, _) = sym_eigen_desc(&m);
    let lmin = vals[vals.len() - 1];
    if lmin > 1e-10 {
        return (m, None);
    }
    let delta = lmin.abs() + 1e-8;
    let d = m.nrows();
    (m + DMatrix::identity(d, d) * delta, Some(delta))
}

/// Working matrices of the four estimators, ridge-repaired where needed.
pub fn portfolio_inputs(est: &VolEstimates) -> Result<Vec<(&'static str, DMatrix<f64>)>> {
    let corrected = est
        .corrected
        .as_ref()
        .ok_or_else(|| Error::Argument("corrected estimates required".into()))?;
    let last = est.anchors.len() - 1;
    let mut out = Vec::new();
    for (tag, set) in [("uncorrected", &est.raw), ("corrected", corrected)] {
        let (sv, _, _) = total_and_precision(&set.spot_sys[last], &set.spot_idio_thr[last])?;
        let (iv, _, _) = total_and_precision(&set.int_sys, &set.int_idio_thr)?;
        out.push((
            if tag == "uncorrected" {
                PORTFOLIO_TAGS[0]
            } else {
                PORTFOLIO_TAGS[2]
            },
            repair_pd(&sv).0,
        ));
        out.push((
            if tag == "uncorrected" {
                PORTFOLIO_TAGS[1]
            } else {
                PORTFOLIO_TAGS[3]
            },
            repair_pd(&iv).0,
        ));
    }
    Ok(out)
}

/// Estimate on the first n increments, evaluate on the next n (efficient returns).
pub fn run_portfolio_replication(cfg: &RunConfig, replication: u64) -> Result<PortfolioReplication> {
    let n = cfg.sim.n;
    let mut sim = cfg.sim.clone();
    sim.n = 2 * n;
    let (panel, _) = simulate_world(&sim, replication)?;
    let first = panel.window(0, n);
    let second = panel.window(n, n);
    let link = cfg.fit_link();
    let f = fit_configured(cfg, &first, link, None)?;
    let y_obs = first.y_obs.as_ref().expect("simulated panel has prices");
    let est = estimate(y_obs, first.delta, &cfg.vol, Some(&f.p_hat))?;
    let returns = returns_from_prices(second.y_eff.as_ref().expect("simulated panel has prices"));
    let ppy = cfg.portfolio.periods_per_year.unwrap_or(1.0 / panel.delta);

    let d = panel.d();
    let equal = vec![1.0 / d as f64; d];
    let equal_weight_risk = oos_evaluate(&equal, &returns, ppy)?;
    let mut points = Vec::new();
    for (tag, cov) in portfolio_inputs(&est)? {
        for res in min_variance_path(&cov, &cfg.portfolio.exposure_grid, &cfg.portfolio)? {
            points.push(PortfolioPoint {
                replication,
                estimator: tag.to_string(),
                c: res.c,
                objective: res.objective,
                oos_risk: oos_evaluate(&res.weights, &returns, ppy)?,
                kkt_residual: res.kkt_residual,
            });
        }
    }
    Ok(PortfolioReplication {
        replication,
        equal_weight_risk,
        points,
    })
}

/// The portfolio experiment over `sim.replications` replications.
pub fn portfolio_experiment(cfg: &RunConfig) -> Result<Vec<PortfolioReplication>> {
    cfg.validate()?;
    (0..cfg.sim.replications as u64)
        .into_par_iter()
        .map(|rep| run_portfolio_replication(cfg, rep))
        .collect()
}
