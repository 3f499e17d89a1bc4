use nalgebra::DMatrix;

use super::normalize::cumulate;
use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::sim::{single_index, Panel};

/// z = A x + Γ g for factor levels g ((n+1) × r_g).
pub fn single_index_levels(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    g: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    single_index(a, gamma, x, g)
}

/// Log-likelihood at factor levels; also returns the number of clamped cells.
pub fn log_likelihood_levels(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    g: &DMatrix<f64>,
    panel: &Panel,
    kind: LinkKind,
) -> Result<(f64, usize)> {
    let z = single_index_levels(a, gamma, &panel.x, g)?;
    if z.shape() != panel.b.shape() {
        return Err(Error::Shape("index and indicator shapes differ".into()));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (zv, bv) in z.iter().zip(panel.b.iter()) {
        if !zv.is_finite() {
            return Err(Error::Domain(format!("single index {zv} is not finite")));
        }
        let (l, hit) = kind.cell_loglik_clamped(*zv, *bv == 1.0);
        total += l;
        clamped += hit as usize;
    }
    Ok((total, clamped))
}

/// Log-likelihood in the increment parametrization (row 0 of ΔG is g_0).
pub fn log_likelihood(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    delta_g: &DMatrix<f64>,
    panel: &Panel,
    kind: LinkKind,
) -> Result<f64> {
    log_likelihood_levels(a, gamma, &cumulate(delta_g), panel, kind).map(|(v, _)| v)
}
