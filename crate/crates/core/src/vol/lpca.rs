use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

/// Local PCA on one block of scaled increments δ (d × k_n).
///
/// Returns (F̂, σ̂) with F̂ of size r × k_n and σ̂ = δF̂'/k_n of size d × r.
pub fn local_pca_block(delta: &DMatrix<f64>, r: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (d, k_n) = delta.shape();
    if d == 0 || k_n == 0 {
        return Err(Error::Shape("empty increment block".into()));
    }
    if r > d.min(k_n) {
        return Err(Error::Rank(format!("r = {r} exceeds min(d, k_n) = {}", d.min(k_n))));
    }
    let gram = delta.transpose() * delta / (d * k_n) as f64;
    let (vals, vecs) = sym_eigen_desc(&gram);
    let positive = vals.iter().filter(|&&v| v > RANK_TOL * vals[0].max(0.0)).count();
    if r > positive {
        return Err(Error::Rank(format!(
            "r = {r} exceeds the {positive} positive eigenvalues of the block"
        )));
    }
    let scale = (k_n as f64).sqrt();
    let f = vecs.columns(0, r).transpose() * scale;
    let sigma = delta * f.transpose() / k_n as f64;
    Ok((f, sigma))
}

/// Spot estimates from one block.
#[derive(Debug, Clone)]
pub struct BlockSpot {
    /// Grid index of the block's left endpoint.
    pub anchor: usize,
    pub sys: DMatrix<f64>,
    /// Raw idiosyncratic estimate (before thresholding).
    pub idio: DMatrix<f64>,
    /// Sampling variability of the residual cross-products, for the thresholds.
    pub hslash: DMatrix<f64>,
}

/// V̂^c, V̂^e and ħ for one block of scaled increments.
pub fn spot_block(delta: &DMatrix<f64>, r: usize, anchor: usize) -> Result<BlockSpot> {
    let (d, k_n) = delta.shape();
    let kf = k_n as f64;
    let (sys, resid) = if r == 0 {
        (DMatrix::zeros(d, d), delta.clone())
    } else {
        let (f, sigma) = local_pca_block(delta, r)?;
        (&sigma * sigma.transpose(), delta - &sigma * &f)
    };
    let mut idio = &resid * resid.transpose() / kf;
    for i in 0..d {
        let rv = delta.row(i).norm_squared() / kf;
        idio[(i, i)] = rv - sys[(i, i)];
    }
    let mut hslash = DMatrix::zeros(d, d);
    for i in 0..d {
        for m in (i + 1)..d {
            let v = idio[(i, m)];
            let h = (0..k_n)
                .map(|j| (resid[(i, j)] * resid[(m, j)] - v).powi(2))
                .sum::<f64>()
                / kf;
            hslash[(i, m)] = h;
            hslash[(m, i)] = h;
        }
    }
    Ok(BlockSpot {
        anchor,
        sys,
        idio,
        hslash,
    })
}

/// Block layout: count of complete blocks and increments left over.
pub fn block_count(n: usize, k_n: usize) -> Result<(usize, usize)> {
    if k_n < 2 || k_n > n {
        return Err(Error::Argument(format!("block length {k_n} must lie in [2, {n}]")));
    }
    Ok((n / k_n, n % k_n))
}

/// d × k_n scaled increments of block `k` (anchor k·k_n).
pub fn block_increments(prices: &DMatrix<f64>, delta_n: f64, k_n: usize, k: usize) -> DMatrix<f64> {
    let d = prices.ncols();
    let start = k * k_n;
    let scale = 1.0 / delta_n.sqrt();
    DMatrix::from_fn(d, k_n, |i, j| {
        (prices[(start + j + 1, i)] - prices[(start + j, i)]) * scale
    })
}

/// Spot estimates for every complete block of an (n+1) × d price panel.
///
/// Returns the blocks and the number of trailing increments dropped.
pub fn spot_estimates(prices: &DMatrix<f64>, delta_n: f64, k_n: usize, r: usize) -> Result<(Vec<BlockSpot>, usize)> {
    if prices.nrows() < 2 {
        return Err(Error::Shape("price panel needs at least two rows".into()));
    }
    if !(delta_n > 0.0) {
        return Err(Error::Argument("mesh must be positive".into()));
    }
    let (blocks, dropped) = block_count(prices.nrows() - 1, k_n)?;
    let out = (0..blocks)
        .into_par_iter()
        .map(|k| spot_block(&block_increments(prices, delta_n, k_n, k), r, k * k_n))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, dropped))
}

/// Riemann aggregation k_nΔ_n Σ_k M_k of per-block spot matrices.
pub fn integrate_blocks(spots: &[DMatrix<f64>], k_n: usize, delta_n: f64) -> Result<DMatrix<f64>> {
    let first = spots
        .first()
        .ok_or_else(|| Error::Argument("no complete block to integrate".into()))?;
    let mut acc = DMatrix::zeros(first.nrows(), first.ncols());
    for m in spots {
        acc += m;
    }
    Ok(acc * (k_n as f64 * delta_n))
}
