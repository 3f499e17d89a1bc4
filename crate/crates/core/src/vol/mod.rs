//! Local-PCA spot and integrated volatility matrices with staleness correction.

mod correction;
mod lpca;
mod precision;
mod select;
mod threshold;

pub use correction::{stale_factor, stale_factor_matrix, staleness_correction, PHI_FLOOR};
pub use lpca::{
    block_count, block_increments, integrate_blocks, local_pca_block, spot_block, spot_estimates, BlockSpot,
};
pub use precision::{total_and_precision, IDIO_EIG_FLOOR};
pub use select::{default_penalty, select_r_price, PriceRankSelection};
pub use threshold::{integrated_hbar, integrated_rate, poet_threshold, spot_rate, thresholds, Shrink};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flags::Flag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// Number of price factors: fixed or chosen by the penalized criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RankChoice {
    Fixed(usize),
    Auto(AutoTag),
}

impl Default for RankChoice {
    fn default() -> Self {
        RankChoice::Fixed(3)
    }
}

impl std::str::FromStr for RankChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(RankChoice::Auto(AutoTag::Auto));
        }
        s.parse()
            .map(RankChoice::Fixed)
            .map_err(|_| Error::Argument(format!("expected an integer or `auto`, got `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VolConfig {
    /// Block length; ⌈√n⌉ when absent.
    pub k_n: Option<usize>,
    pub r: RankChoice,
    /// Largest candidate when `r` is automatic.
    pub r_max: usize,
    pub threshold_c: f64,
    pub shrink: Shrink,
    /// Override of the rank penalty g(n, d).
    pub penalty: Option<f64>,
}

impl Default for VolConfig {
    fn default() -> Self {
        VolConfig {
            k_n: None,
            r: RankChoice::default(),
            r_max: 8,
            threshold_c: 1.0,
            shrink: Shrink::Soft,
            penalty: None,
        }
    }
}

impl VolConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k_n {
            if k < 2 {
                return Err(Error::validation("vol.k_n", "must be at least 2"));
            }
        }
        if self.r_max == 0 {
            return Err(Error::validation("vol.r_max", "must be at least 1"));
        }
        if !(self.threshold_c >= 0.0) {
            return Err(Error::validation("vol.threshold_c", "must be non-negative"));
        }
        if let Some(g) = self.penalty {
            if !(g >= 0.0) {
                return Err(Error::validation("vol.penalty", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn block_length(&self, n: usize) -> usize {
        self.k_n.unwrap_or_else(|| (n as f64).sqrt().ceil() as usize)
    }
}

/// One family of estimates (uncorrected or corrected).
#[derive(Debug, Clone)]
pub struct VolSet {
    pub spot_sys: Vec<DMatrix<f64>>,
    pub spot_idio_raw: Vec<DMatrix<f64>>,
    pub spot_idio_thr: Vec<DMatrix<f64>>,
    pub int_sys: DMatrix<f64>,
    pub int_idio_raw: DMatrix<f64>,
    pub int_idio_thr: DMatrix<f64>,
    pub total_int: DMatrix<f64>,
    /// Inverse of the total spot matrix of the final block.
    pub precision_spot: DMatrix<f64>,
}

impl VolSet {
    /// V̂ = V̂^c + V̂^{e𝒯} of block k.
    pub fn total_spot(&self, k: usize) -> DMatrix<f64> {
        &self.spot_sys[k] + &self.spot_idio_thr[k]
    }
}

#[derive(Debug, Clone)]
pub struct VolEstimates {
    pub k_n: usize,
    pub r: usize,
    /// Grid index of each block's left endpoint.
    pub anchors: Vec<usize>,
    pub dropped: usize,
    pub raw: VolSet,
    /// Present when staleness probabilities were supplied.
    pub corrected: Option<VolSet>,
    pub rank_selection: Option<PriceRankSelection>,
    pub flags: Vec<Flag>,
}

struct Ingredients {
    sys: Vec<DMatrix<f64>>,
    idio: Vec<DMatrix<f64>>,
    hslash: Vec<DMatrix<f64>>,
}

fn assemble(
    ing: Ingredients,
    n: usize,
    k_n: usize,
    delta_n: f64,
    config: &VolConfig,
    flags: &mut Vec<Flag>,
) -> Result<VolSet> {
    let d = ing.sys[0].nrows();
    let spot_rate = spot_rate(n, d);
    let spot_idio_thr = ing
        .idio
        .iter()
        .zip(&ing.hslash)
        .map(|(v, h)| poet_threshold(v, &thresholds(h, config.threshold_c, spot_rate), config.shrink))
        .collect::<Result<Vec<_>>>()?;
    let int_sys = integrate_blocks(&ing.sys, k_n, delta_n)?;
    let int_idio_raw = integrate_blocks(&ing.idio, k_n, delta_n)?;
    let hbar = integrated_hbar(&ing.idio, &int_idio_raw, k_n, delta_n);
    let tau = thresholds(&hbar, config.threshold_c, integrated_rate(n, d));
    let int_idio_thr = poet_threshold(&int_idio_raw, &tau, config.shrink)?;
    let total_int = &int_sys + &int_idio_thr;
    let last = ing.sys.len() - 1;
    let (_, precision_spot, pflags) = total_and_precision(&ing.sys[last], &spot_idio_thr[last])?;
    flags.extend(pflags);
    Ok(VolSet {
        spot_sys: ing.sys,
        spot_idio_raw: ing.idio,
        spot_idio_thr,
        int_sys,
        int_idio_raw,
        int_idio_thr,
        total_int,
        precision_spot,
    })
}

/// Full estimation on an (n+1) × d log-price panel.
///
/// With `p_hat` ((n+1) × d staleness probabilities) the corrected family is
/// produced as well, each block corrected at its left endpoint.
pub fn estimate(
    prices: &DMatrix<f64>,
    delta_n: f64,
    config: &VolConfig,
    p_hat: Option<&DMatrix<f64>>,
) -> Result<VolEstimates> {
    config.validate()?;
    let n = prices.nrows().saturating_sub(1);
    let k_n = config.block_length(n);
    let mut flags = Vec::new();
    let (r, rank_selection) = match config.r {
        RankChoice::Fixed(r) => (r, None),
        RankChoice::Auto(_) => {
            let r_max = config.r_max.min(prices.ncols()).min(k_n);
            let sel = select_r_price(prices, delta_n, k_n, r_max, config.penalty)?;
            (sel.r, Some(sel))
        }
    };
    let (blocks, dropped) = spot_estimates(prices, delta_n, k_n, r)?;
    if dropped > 0 {
        flags.push(Flag::PartialBlockDropped { increments: dropped });
    }
    if let Some(p) = p_hat {
        if p.shape() != prices.shape() {
            return Err(Error::Shape(format!(
                "p_hat has shape {:?}, expected {:?}",
                p.shape(),
                prices.shape()
            )));
        }
    }
    let anchors: Vec<usize> = blocks.iter().map(|b| b.anchor).collect();

    let corrected_ing = match p_hat {
        Some(p) => {
            let (mut sys, mut idio, mut hslash) = (Vec::new(), Vec::new(), Vec::new());
            let (mut clipped, mut skipped) = (0, 0);
            for b in &blocks {
                let row: Vec<f64> = p.row(b.anchor).iter().copied().collect();
                let (phi, c) = stale_factor_matrix(&row)?;
                clipped += c;
                let (s, k1) = staleness_correction(&b.sys, &phi)?;
                let (e, _) = staleness_correction(&b.idio, &phi)?;
                let phi2 = phi.map(|v| v * v);
                let (h, _) = staleness_correction(&b.hslash, &phi2)?;
                skipped += k1;
                sys.push(s);
                idio.push(e);
                hslash.push(h);
            }
            if clipped > 0 {
                flags.push(Flag::Clipped {
                    context: "staleness probability".into(),
                    count: clipped,
                });
            }
            if skipped > 0 {
                flags.push(Flag::Unrecoverable { count: skipped });
            }
            Some(Ingredients { sys, idio, hslash })
        }
        None => None,
    };
    let raw_ing = Ingredients {
        sys: blocks.iter().map(|b| b.sys.clone()).collect(),
        idio: blocks.iter().map(|b| b.idio.clone()).collect(),
        hslash: blocks.into_iter().map(|b| b.hslash).collect(),
    };
    let raw = assemble(raw_ing, n, k_n, delta_n, config, &mut flags)?;
    let corrected = match corrected_ing {
        Some(ing) => Some(assemble(ing, n, k_n, delta_n, config, &mut flags)?),
        None => None,
    };
    Ok(VolEstimates {
        k_n,
        r,
        anchors,
        dropped,
        raw,
        corrected,
        rank_selection,
        flags,
    })
}
