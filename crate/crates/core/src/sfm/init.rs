use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{spd_solve, sym_eigen_desc};
use crate::link::{clip_probability, LinkKind};
use crate::sim::Panel;

/// Ridge used when a covariate cross-product matrix is singular.
pub const INIT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct InitialValues {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub delta_g: DMatrix<f64>,
    pub flags: Vec<Flag>,
}

/// Forward block means p̃_j = mean(B_j, …, B_{j+k̄−1}), shortened at the sample end.
pub fn block_probabilities(b: &DMatrix<f64>, kbar: usize) -> DMatrix<f64> {
    let rows = b.nrows();
    let mut out = DMatrix::zeros(rows, b.ncols());
    for i in 0..b.ncols() {
        let col = b.column(i);
        // Suffix sums make every window O(1).
        let mut suffix = vec![0.0; rows + 1];
        for j in (0..rows).rev() {
            suffix[j] = suffix[j + 1] + col[j];
        }
        for j in 0..rows {
            let end = (j + kbar).min(rows);
            out[(j, i)] = (suffix[j] - suffix[end]) / (end - j) as f64;
        }
    }
    out
}

/// Scaled principal components of increments: Γ = √d × top eigenvectors, ΔG = ΔR Γ / d.
pub fn factor_pca(delta_r: &DMatrix<f64>, r_g: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = delta_r.ncols();
    if r_g > d {
        return Err(Error::Rank(format!("r_g = {r_g} exceeds d = {d}")));
    }
    let (_, vecs) = sym_eigen_desc(&(delta_r.transpose() * delta_r));
    let gamma = vecs.columns(0, r_g).into_owned() * (d as f64).sqrt();
    let delta_g = delta_r * &gamma / d as f64;
    Ok((gamma, delta_g))
}

/// Starting values from local block frequencies.
pub fn initialize(panel: &Panel, kind: LinkKind, r_g: usize, kbar: usize) -> Result<InitialValues> {
    panel.validate()?;
    if kbar < 2 {
        return Err(Error::Argument(format!("block window k̄ = {kbar} must be at least 2")));
    }
    let p_tilde = block_probabilities(&panel.b, kbar);
    initialize_from_probabilities(&p_tilde, &panel.x, kind, r_g)
}

/// Starting values from given rough probabilities p̃ ((n+1) × d).
pub fn initialize_from_probabilities(
    p_tilde: &DMatrix<f64>,
    x: &[DMatrix<f64>],
    kind: LinkKind,
    r_g: usize,
) -> Result<InitialValues> {
    let (rows, d) = p_tilde.shape();
    let r_x = x.len();
    if x.iter().any(|m| m.shape() != (rows, d)) {
        return Err(Error::Shape("covariates must match the probability panel".into()));
    }
    let z_tilde = p_tilde.map(|p| kind.quantile(clip_probability(p)));

    let mut flags = Vec::new();
    let mut a = DMatrix::zeros(d, r_x);
    let mut resid = z_tilde.clone();
    for i in 0..d {
        let xi = DMatrix::from_fn(rows, r_x, |j, l| x[l][(j, i)]);
        let zi = z_tilde.column(i).into_owned();
        let (coef, ridge) = spd_solve(&(xi.transpose() * &xi), &(xi.transpose() * &zi), INIT_RIDGE)?;
        if ridge > 0.0 {
            flags.push(Flag::Ridge {
                context: format!("initializer asset {i}"),
                lambda: ridge,
            });
        }
        a.set_row(i, &coef.transpose());
        let fitted: DVector<f64> = &xi * &coef;
        resid.set_column(i, &(zi - fitted));
    }

    let mut delta_r = resid.clone();
    for j in 1..rows {
        for i in 0..d {
            delta_r[(j, i)] = resid[(j, i)] - resid[(j - 1, i)];
        }
    }
    let (gamma, delta_g) = factor_pca(&delta_r, r_g)?;
    Ok(InitialValues {
        a,
        gamma,
        delta_g,
        flags,
    })
}
