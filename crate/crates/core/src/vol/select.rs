use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::lpca::{block_count, block_increments};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;

/// Default penalty g(n, d) = ((d + k_n)/(d k_n)) log(min(d, k_n)).
pub fn default_penalty(d: usize, k_n: usize) -> f64 {
    let (df, kf) = (d as f64, k_n as f64);
    (df + kf) / (df * kf) * df.min(kf).ln()
}

#[derive(Debug, Clone, Serialize)]
pub struct PriceRankSelection {
    pub r: usize,
    /// Block-averaged residual mean square V(k) for k = 0..=r_max.
    pub residual: Vec<f64>,
    /// Penalized criterion for k = 1..=r_max.
    pub criterion: Vec<f64>,
}

/// Pick the number of price factors by minimizing ln V(k) + k·g.
///
/// `penalty` overrides g; a zero penalty selects `r_max`.
pub fn select_r_price(
    prices: &DMatrix<f64>,
    delta_n: f64,
    k_n: usize,
    r_max: usize,
    penalty: Option<f64>,
) -> Result<PriceRankSelection> {
    let d = prices.ncols();
    let (blocks, _) = block_count(prices.nrows().saturating_sub(1), k_n)?;
    if r_max == 0 || r_max > d.min(k_n) {
        return Err(Error::Argument(format!(
            "r_max = {r_max} must lie in [1, {}]",
            d.min(k_n)
        )));
    }
    let g = penalty.unwrap_or_else(|| default_penalty(d, k_n));
    if !(g >= 0.0) {
        return Err(Error::Argument("penalty must be non-negative".into()));
    }
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let delta = block_increments(prices, delta_n, k_n, k);
            let gram = delta.transpose() * &delta / (d * k_n) as f64;
            let (vals, _) = sym_eigen_desc(&gram);
            let mut v = Vec::with_capacity(r_max + 1);
            let mut rest = gram.trace();
            v.push(rest);
            for l in 0..r_max {
                rest -= vals[l].max(0.0);
                v.push(rest.max(0.0));
            }
            v
        })
        .collect();
    let residual: Vec<f64> = (0..=r_max)
        .map(|k| per_block.iter().map(|v| v[k]).sum::<f64>() / blocks as f64)
        .collect();
    let criterion: Vec<f64> = (1..=r_max)
        .map(|k| residual[k].max(f64::MIN_POSITIVE).ln() + k as f64 * g)
        .collect();
    let best = criterion
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k + 1)
        .unwrap_or(1);
    Ok(PriceRankSelection {
        r: best,
        residual,
        criterion,
    })
}
