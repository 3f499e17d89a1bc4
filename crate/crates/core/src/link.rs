//! Link functions mapping the single index z to a staleness probability.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Lower clip applied to probabilities before inversion.
pub const P_FLOOR: f64 = 1e-6;
/// Upper clip applied to probabilities before inversion.
pub const P_CEIL: f64 = 0.95;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Logit,
    Probit,
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinkKind::Logit => write!(f, "logit"),
            LinkKind::Probit => write!(f, "probit"),
        }
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(LinkKind::Logit),
            "probit" => Ok(LinkKind::Probit),
            other => Err(Error::Argument(format!("unknown link `{other}`"))),
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

impl LinkKind {
    /// Ψ(z), no domain check.
    #[inline]
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            LinkKind::Logit => logistic(z),
            LinkKind::Probit => norm_cdf(z),
        }
    }

    /// ψ(z) = dΨ/dz, no domain check.
    #[inline]
    pub fn pdf(self, z: f64) -> f64 {
        match self {
            LinkKind::Logit => {
                let p = logistic(z);
                p * (1.0 - p)
            }
            LinkKind::Probit => norm_pdf(z),
        }
    }

    /// Fisher weight ψ²/(Ψ(1−Ψ)) of one Bernoulli cell.
    #[inline]
    pub fn fisher_weight(self, z: f64) -> f64 {
        match self {
            LinkKind::Logit => {
                let p = logistic(z);
                p * (1.0 - p)
            }
            LinkKind::Probit => {
                let p = norm_cdf(z);
                let q = norm_cdf(-z);
                let f = norm_pdf(z);
                f * f / (p * q)
            }
        }
    }

    /// Log-likelihood of one Bernoulli cell with its first two derivatives in z.
    ///
    /// `stale` is the observed indicator B. Returns (ℓ, ∂ℓ/∂z, ∂²ℓ/∂z²).
    #[inline]
    pub fn cell_loglik(self, z: f64, stale: bool) -> (f64, f64, f64) {
        match self {
            LinkKind::Logit => {
                let e = (-z.abs()).exp();
                let p = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let b = if stale { 1.0 } else { 0.0 };
                let sp = z.max(0.0) + e.ln_1p();
                (b * z - sp, b - p, -p * (1.0 - p))
            }
            LinkKind::Probit => {
                // log Φ(qz) with q = ±1; both derivatives via the Mills ratio.
                let q = if stale { 1.0 } else { -1.0 };
                let x = q * z;
                let cdf = norm_cdf(x);
                let lam = if cdf > 0.0 {
                    norm_pdf(x) / cdf
                } else {
                    // Asymptotic Mills ratio for the far lower tail.
                    -x
                };
                let l = if cdf > 0.0 {
                    cdf.ln()
                } else {
                    -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                };
                (l, q * lam, -lam * (x + lam))
            }
        }
    }

    /// Cell log-likelihood with the log argument clamped at 1e-300.
    ///
    /// The second value reports whether the clamp was needed.
    #[inline]
    pub fn cell_loglik_clamped(self, z: f64, stale: bool) -> (f64, bool) {
        const FLOOR: f64 = -690.775_527_898_213_7; // ln(1e-300)
        let (l, _, _) = self.cell_loglik(z, stale);
        if l < FLOOR || !l.is_finite() {
            (FLOOR, true)
        } else {
            (l, false)
        }
    }

    /// Inverse of Ψ on (0,1), no clipping.
    pub fn quantile(self, p: f64) -> f64 {
        match self {
            LinkKind::Logit => (p / (1.0 - p)).ln(),
            LinkKind::Probit => probit_quantile(p),
        }
    }
}

/// Ψ(z) for finite z.
pub fn link_eval(kind: LinkKind, z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("link argument {z} is not finite")));
    }
    Ok(kind.cdf(z))
}

/// ψ^(order−1)(z): order 1 is the density, orders 2 and 3 its derivatives.
pub fn link_deriv(kind: LinkKind, z: f64, order: u8) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("link argument {z} is not finite")));
    }
    let psi = kind.pdf(z);
    match (kind, order) {
        (_, 1) => Ok(psi),
        (LinkKind::Logit, 2) => Ok(psi * (1.0 - 2.0 * kind.cdf(z))),
        (LinkKind::Logit, 3) => {
            let p = kind.cdf(z);
            Ok(psi * (1.0 - 6.0 * p + 6.0 * p * p))
        }
        (LinkKind::Probit, 2) => Ok(-z * psi),
        (LinkKind::Probit, 3) => Ok((z * z - 1.0) * psi),
        _ => Err(Error::Argument(format!("derivative order {order} not in {{1,2,3}}"))),
    }
}

/// Clip a probability into [P_FLOOR, P_CEIL].
#[inline]
pub fn clip_probability(p: f64) -> f64 {
    p.clamp(P_FLOOR, P_CEIL)
}

/// Ψ⁻¹ of a probability after clipping into [P_FLOOR, P_CEIL].
pub fn link_inverse(kind: LinkKind, p: f64) -> Result<f64> {
    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0,1]")));
    }
    Ok(kind.quantile(clip_probability(p)))
}

/// Acklam's rational approximation followed by one Newton step on Φ.
fn probit_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let pdf = norm_pdf(x);
    if pdf > 0.0 {
        x - (norm_cdf(x) - p) / pdf
    } else {
        x
    }
}
