//! Gross-exposure constrained minimum-variance portfolios.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{sym_eigen_desc, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioConfig {
    /// Gross-exposure bounds c to evaluate.
    pub exposure_grid: Vec<f64>,
    /// Annualization factor for realized risk; 252 × increments per day when absent.
    pub periods_per_year: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            exposure_grid: (0..=8).map(|k| 1.0 + 0.25 * k as f64).collect(),
            periods_per_year: None,
            max_iter: 20_000,
            tol: 1e-8,
        }
    }
}

impl PortfolioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exposure_grid.is_empty() {
            return Err(Error::validation("portfolio.exposure_grid", "must not be empty"));
        }
        if self.exposure_grid.iter().any(|&c| !(c >= 1.0)) {
            return Err(Error::validation(
                "portfolio.exposure_grid",
                "every bound must be at least 1",
            ));
        }
        if let Some(p) = self.periods_per_year {
            if !(p > 0.0) {
                return Err(Error::validation("portfolio.periods_per_year", "must be positive"));
            }
        }
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::validation("portfolio.tol", "solver settings must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PortfolioResult {
    pub weights: Vec<f64>,
    pub c: f64,
    pub objective: f64,
    /// Annualized realized volatility on the evaluation window.
    pub oos_risk: Option<f64>,
    pub estimator_tag: String,
    /// Projected-gradient residual at the returned weights.
    pub kkt_residual: f64,
    pub flags: Vec<Flag>,
}

/// Threshold a with Σ(y_i − a)_+ = s, for s > 0.
fn upper_threshold(y: &[f64], s: f64) -> f64 {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut a = sorted[0] - s;
    for (k, v) in sorted.iter().enumerate() {
        cum += v;
        let cand = (cum - s) / (k + 1) as f64;
        if cand < *v {
            a = cand;
        } else {
            break;
        }
    }
    a
}

/// Euclidean projection onto {w : 1'w = 1, ‖w‖₁ ≤ c}.
pub fn project_budget_l1(y: &DVector<f64>, c: f64) -> DVector<f64> {
    let d = y.len() as f64;
    let nu = (y.sum() - 1.0) / d;
    let free = y.map(|v| v - nu);
    if free.lp_norm(1) <= c {
        return free;
    }
    // Active exposure: positive parts sum to (c+1)/2, negative parts to (c−1)/2.
    let ys: Vec<f64> = y.iter().copied().collect();
    let a = upper_threshold(&ys, 0.5 * (c + 1.0));
    let b = if c > 1.0 {
        let neg: Vec<f64> = ys.iter().map(|v| -v).collect();
        -upper_threshold(&neg, 0.5 * (c - 1.0))
    } else {
        f64::NEG_INFINITY
    };
    let b = b.min(a);
    y.map(|v| (v - a).max(0.0) - (b - v).max(0.0))
}

fn objective(cov: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(cov * w))
}

/// ‖w − P(w − ∇f/L)‖ for f = w'Σw.
fn kkt_residual(cov: &DMatrix<f64>, w: &DVector<f64>, c: f64, lip: f64) -> f64 {
    let g = cov * w * 2.0;
    (w - project_budget_l1(&(w - g / lip), c)).norm()
}

/// Exact minimizer on a fixed sign pattern: zeros fixed, budget and
/// (optionally) exposure as equalities. Returns None when singular.
fn solve_pattern(cov: &DMatrix<f64>, signs: &[i8], c: f64, exposure_active: bool) -> Option<DVector<f64>> {
    let idx: Vec<usize> = (0..signs.len()).filter(|&i| signs[i] != 0).collect();
    let k = idx.len();
    if k == 0 {
        return None;
    }
    let m = if exposure_active { 2 } else { 1 };
    let mut kkt = DMatrix::zeros(k + m, k + m);
    let mut rhs = DVector::zeros(k + m);
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            kkt[(a, b)] = 2.0 * cov[(i, j)];
        }
        kkt[(a, k)] = 1.0;
        kkt[(k, a)] = 1.0;
        if exposure_active {
            let s = signs[i] as f64;
            kkt[(a, k + 1)] = s;
            kkt[(k + 1, a)] = s;
        }
    }
    rhs[k] = 1.0;
    if exposure_active {
        rhs[k + 1] = c;
    }
    let sol = kkt.lu().solve(&rhs)?;
    let mut w = DVector::zeros(signs.len());
    for (a, &i) in idx.iter().enumerate() {
        w[i] = sol[a];
    }
    Some(w)
}

fn feasible(w: &DVector<f64>, c: f64) -> bool {
    (w.sum() - 1.0).abs() <= 1e-8 && w.lp_norm(1) <= c + 1e-6
}

/// Minimum-variance weights under w'1 = 1 and ‖w‖₁ ≤ c.
pub fn min_variance(cov: &DMatrix<f64>, c: f64, config: &PortfolioConfig) -> Result<PortfolioResult> {
    let d = cov.nrows();
    if d == 0 || cov.ncols() != d {
        return Err(Error::Shape("covariance must be square and non-empty".into()));
    }
    if !(c >= 1.0) {
        return Err(Error::Argument(format!("exposure bound c = {c} must be at least 1")));
    }
    let cov = symmetrize(cov);
    let (vals, _) = sym_eigen_desc(&cov);
    if !(vals[d - 1] > 0.0) {
        return Err(Error::Degenerate("covariance is not positive definite".into()));
    }
    let lip = 2.0 * vals[0];
    let mut flags = Vec::new();

    // Accelerated projected gradient.
    let mut w = DVector::from_element(d, 1.0 / d as f64);
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    for _ in 0..config.max_iter {
        let g = &cov * &y * 2.0;
        let w_next = project_budget_l1(&(&y - g / lip), c);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = &w_next + (&w_next - &w) * momentum;
        let moved = (&w_next - &w).norm();
        w = w_next;
        t = t_next;
        if moved < 1e-3 * config.tol && kkt_residual(&cov, &w, c, lip) <= config.tol {
            converged = true;
            break;
        }
    }

    // Active-set polishing on the sign pattern found.
    let zero_tol = 1e-7;
    let signs: Vec<i8> = w
        .iter()
        .map(|&v| {
            if v > zero_tol {
                1
            } else if v < -zero_tol {
                -1
            } else {
                0
            }
        })
        .collect();
    let active = w.lp_norm(1) > c - 1e-6;
    if let Some(p) = solve_pattern(&cov, &signs, c, active) {
        let signs_hold = p.iter().zip(&signs).all(|(v, &s)| s == 0 || v * s as f64 > 0.0);
        if signs_hold && feasible(&p, c) && objective(&cov, &p) <= objective(&cov, &w) + 1e-15 {
            let res = kkt_residual(&cov, &p, c, lip);
            if res <= kkt_residual(&cov, &w, c, lip).max(config.tol) {
                w = p;
                converged = converged || res <= config.tol;
            }
        }
    }
    let kkt = kkt_residual(&cov, &w, c, lip);
    if !converged && kkt > config.tol {
        flags.push(Flag::SolverStall {
            context: format!("min-variance solve at c = {c}"),
        });
    }
    Ok(PortfolioResult {
        weights: w.iter().copied().collect(),
        c,
        objective: objective(&cov, &w),
        oos_risk: None,
        estimator_tag: String::new(),
        kkt_residual: kkt,
        flags,
    })
}

/// Solve over a grid of bounds. A solution found at a smaller bound stays
/// feasible for larger ones and is kept when the fresh solve does worse.
pub fn min_variance_path(cov: &DMatrix<f64>, grid: &[f64], config: &PortfolioConfig) -> Result<Vec<PortfolioResult>> {
    let mut out: Vec<PortfolioResult> = Vec::with_capacity(grid.len());
    for &c in grid {
        let mut res = min_variance(cov, c, config)?;
        let incumbent = out
            .iter()
            .filter(|r| r.weights.iter().map(|v| v.abs()).sum::<f64>() <= c)
            .min_by(|a, b| a.objective.total_cmp(&b.objective));
        if let Some(best) = incumbent {
            if best.objective < res.objective {
                let w = DVector::from_column_slice(&best.weights);
                let lip = 2.0 * sym_eigen_desc(&symmetrize(cov)).0[0];
                res.weights = best.weights.clone();
                res.objective = best.objective;
                res.kkt_residual = kkt_residual(&symmetrize(cov), &w, c, lip);
            }
        }
        out.push(res);
    }
    Ok(out)
}

/// √(periods_per_year) · sample std of the portfolio return series.
pub fn oos_evaluate(weights: &[f64], returns: &DMatrix<f64>, periods_per_year: f64) -> Result<f64> {
    let (rows, d) = returns.shape();
    if rows < 2 {
        return Err(Error::Argument("evaluation window needs at least two returns".into()));
    }
    if weights.len() != d {
        return Err(Error::Shape(format!("{} weights for {d} assets", weights.len())));
    }
    if !(periods_per_year > 0.0) {
        return Err(Error::Argument("periods per year must be positive".into()));
    }
    let w = DVector::from_column_slice(weights);
    let r = returns * w;
    let r = r.add_scalar(-r[0]);
    let mean = r.mean();
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
    Ok((periods_per_year * var).sqrt())
}

/// Increments of an (n+1) × d price panel as an n × d return matrix.
pub fn returns_from_prices(prices: &DMatrix<f64>) -> DMatrix<f64> {
    let n = prices.nrows().saturating_sub(1);
    DMatrix::from_fn(n, prices.ncols(), |j, i| prices[(j + 1, i)] - prices[(j, i)])
}
