//! Staleness indicators driven by covariates and latent staleness factors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::link::LinkKind;

/// Indices, probabilities and Bernoulli indicators of one staleness draw.
#[derive(Debug, Clone)]
pub struct StalenessDraw {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Loadings of the design: A entries U(0,6), Γ entries N(0,1).
pub fn draw_loadings<R: Rng + ?Sized>(d: usize, r_x: usize, r_g: usize, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_fn(d, r_x, |_, _| rng.random_range(0.0..6.0));
    let gamma = DMatrix::from_fn(d, r_g, |_, _| rng.sample::<f64, _>(StandardNormal));
    (a, gamma)
}

/// z_ij = a_i'x_ij + γ_i'g_j for all cells; x holds one (n+1) × d matrix per covariate.
pub fn single_index(
    a: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    g: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    if x.len() != a.ncols() || gamma.ncols() != g.ncols() || gamma.nrows() != d {
        return Err(Error::Shape("loadings do not match covariates/factors".into()));
    }
    let rows = g.nrows();
    if x.iter().any(|m| m.nrows() != rows || m.ncols() != d) {
        return Err(Error::Shape("covariate matrices must be (n+1) × d".into()));
    }
    let mut z = g * gamma.transpose();
    for (l, xl) in x.iter().enumerate() {
        for i in 0..d {
            let ail = a[(i, l)];
            for j in 0..rows {
                z[(j, i)] += ail * xl[(j, i)];
            }
        }
    }
    Ok(z)
}

/// Probabilities p = Ψ(z) and indicators B_ij = 1{b_ij <= p_ij} with b uniform.
pub fn staleness_from_loadings<R: Rng + ?Sized>(
    kind: LinkKind,
    a: DMatrix<f64>,
    gamma: DMatrix<f64>,
    x: &[DMatrix<f64>],
    g: &DMatrix<f64>,
    rng: &mut R,
) -> Result<StalenessDraw> {
    let z = single_index(&a, &gamma, x, g)?;
    let p = z.map(|v| kind.cdf(v));
    // Draw order is asset-major so each asset's indicators are one contiguous run.
    let mut b = DMatrix::zeros(p.nrows(), p.ncols());
    for i in 0..p.ncols() {
        for j in 0..p.nrows() {
            let u: f64 = rng.random();
            b[(j, i)] = if u <= p[(j, i)] { 1.0 } else { 0.0 };
        }
    }
    Ok(StalenessDraw { a, gamma, z, p, b })
}

/// Full staleness step: loadings from `rng_loadings`, indicators from `rng_bernoulli`.
pub fn simulate_staleness<R: Rng + ?Sized>(
    kind: LinkKind,
    x: &[DMatrix<f64>],
    g: &DMatrix<f64>,
    rng_loadings: &mut R,
    rng_bernoulli: &mut R,
) -> Result<StalenessDraw> {
    let d = x.first().map(|m| m.ncols()).unwrap_or(0);
    let (a, gamma) = draw_loadings(d, x.len(), g.ncols(), rng_loadings);
    staleness_from_loadings(kind, a, gamma, x, g, rng_bernoulli)
}
