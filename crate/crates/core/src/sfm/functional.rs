use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::SfmFit;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::link::{P_CEIL, P_FLOOR};
use crate::sim::Panel;

/// Estimate of ∫φ(p_i, p_m)dt with its plug-in standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FunctionalEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Fitted probabilities moved into [1e-6, 0.95] before evaluation.
    pub clipped: usize,
}

const STEP: f64 = 1e-6;

fn partials(phi: &dyn Fn(f64, f64) -> f64, x: f64, y: f64) -> (f64, f64) {
    let hx = STEP.min(x - P_FLOOR * 0.5).min(1.0 - x).max(1e-9);
    let hy = STEP.min(y - P_FLOOR * 0.5).min(1.0 - y).max(1e-9);
    (
        (phi(x + hx, y) - phi(x - hx, y)) / (2.0 * hx),
        (phi(x, y + hy) - phi(x, y - hy)) / (2.0 * hy),
    )
}

/// Û = Δ Σ_{j<n} φ(p̂_ij, p̂_mj) and its standard error √(Δ(Ω̃_i + Ω̃_m)).
///
/// Partial derivatives of φ are taken by central differences.
pub fn integrated_functional(
    fit: &SfmFit,
    panel: &Panel,
    i: usize,
    m: usize,
    phi: impl Fn(f64, f64) -> f64,
) -> Result<FunctionalEstimate> {
    let (rows, d) = fit.p_hat.shape();
    if i >= d || m >= d {
        return Err(Error::Argument(format!("asset index out of range (d = {d})")));
    }
    if i == m {
        return Err(Error::Argument("functional needs two distinct assets".into()));
    }
    if panel.b.shape() != (rows, d) {
        return Err(Error::Shape("fit does not match the panel".into()));
    }
    let n = rows - 1;
    let delta = panel.delta;
    let mut clipped = 0;
    let mut p = |j: usize, k: usize| {
        let v = fit.p_hat[(j, k)];
        let c = v.clamp(P_FLOOR, P_CEIL);
        if c != v {
            clipped += 1;
        }
        c
    };
    let pi: Vec<f64> = (0..rows).map(|j| p(j, i)).collect();
    let pm: Vec<f64> = (0..rows).map(|j| p(j, m)).collect();
    let value = delta * (0..n).map(|j| phi(pi[j], pm[j])).sum::<f64>();

    let r_x = panel.r_x();
    let k = r_x + fit.r_g();
    let u = |j: usize, a: usize| {
        DVector::from_fn(k, |l, _| {
            if l < r_x {
                panel.x[l][(j, a)]
            } else {
                fit.g_hat[(j, l - r_x)]
            }
        })
    };
    let omega_tilde = |asset: usize, first: bool| -> Result<f64> {
        let mut s = DVector::zeros(k);
        let mut info = DMatrix::zeros(k, k);
        for j in 0..rows {
            let uj = u(j, asset);
            let (d1, d2) = partials(&phi, pi[j], pm[j]);
            s += &uj * if first { d1 } else { d2 };
            info += &uj * uj.transpose() * fit.link.fisher_weight(fit.z_hat[(j, asset)]);
        }
        let (sol, _) = spd_solve(&info, &s, 1e-10)?;
        Ok(delta * s.dot(&sol))
    };
    let var = omega_tilde(i, true)? + omega_tilde(m, false)?;
    Ok(FunctionalEstimate {
        value,
        std_error: (delta * var.max(0.0)).sqrt(),
        clipped,
    })
}
