use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{sym_apply, sym_eigen_desc, symmetrize};

/// Below this eigen-gap the factor ordering is not identified.
pub const GAP_TOL: f64 = 1e-12;

/// Levels from increments: G = ϱ ΔG with ϱ lower-triangular ones.
pub fn cumulate(delta_g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = delta_g.clone();
    for k in 0..g.ncols() {
        for j in 1..g.nrows() {
            g[(j, k)] += g[(j - 1, k)];
        }
    }
    g
}

/// Increments from levels, row 0 kept as the level g_0.
pub fn difference(g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut dg = g.clone();
    for k in 0..g.ncols() {
        for j in (1..g.nrows()).rev() {
            dg[(j, k)] = g[(j, k)] - g[(j - 1, k)];
        }
    }
    dg
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub gamma: DMatrix<f64>,
    pub delta_g: DMatrix<f64>,
    /// Diagonal of ΔG'ΔG/(n+1) after normalization, decreasing.
    pub eigenvalues: DVector<f64>,
    /// Smallest gap between consecutive eigenvalues (∞ for one factor).
    pub min_gap: f64,
    pub flags: Vec<Flag>,
}

/// Rotate (Γ, ΔG) so that Γ'Γ/d = I and ΔG'ΔG/(n+1) is diagonal and decreasing.
///
/// Each factor's sign is chosen so its largest-magnitude loading is positive.
pub fn normalize_factors(gamma_raw: &DMatrix<f64>, delta_g_raw: &DMatrix<f64>) -> Result<Normalized> {
    let (d, r) = gamma_raw.shape();
    if delta_g_raw.ncols() != r {
        return Err(Error::Shape(format!(
            "Γ has {r} columns but ΔG has {}",
            delta_g_raw.ncols()
        )));
    }
    if r == 0 {
        return Ok(Normalized {
            gamma: gamma_raw.clone(),
            delta_g: delta_g_raw.clone(),
            eigenvalues: DVector::zeros(0),
            min_gap: f64::INFINITY,
            flags: Vec::new(),
        });
    }
    let rows = delta_g_raw.nrows() as f64;
    let s = symmetrize(&(gamma_raw.transpose() * gamma_raw / d as f64));
    let (s_vals, _) = sym_eigen_desc(&s);
    if !(s_vals[r - 1] > 1e-14 * s_vals[0].max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("Γ'Γ/d is singular".into()));
    }
    let s_half = sym_apply(&s, f64::sqrt);
    let s_inv_half = sym_apply(&s, |v| 1.0 / v.sqrt());
    let m = symmetrize(&(&s_half * (delta_g_raw.transpose() * delta_g_raw / rows) * &s_half));
    let (vals, q) = sym_eigen_desc(&m);

    let mut gamma = gamma_raw * &s_inv_half * &q;
    let mut delta_g = delta_g_raw * &s_half * &q;
    for k in 0..r {
        let col = gamma.column(k);
        let lead = col
            .iter()
            .fold(0.0f64, |best, &v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            gamma.column_mut(k).neg_mut();
            delta_g.column_mut(k).neg_mut();
        }
    }
    let min_gap = (1..r).map(|k| vals[k - 1] - vals[k]).fold(f64::INFINITY, f64::min);
    let mut flags = Vec::new();
    if min_gap < GAP_TOL {
        flags.push(Flag::NonIdentifiable { gap: min_gap });
    }
    Ok(Normalized {
        gamma,
        delta_g,
        eigenvalues: vals,
        min_gap,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream_raw;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = substream_raw(seed, 0, 99);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn check_constraints(out: &Normalized, tol: f64) {
        let d = out.gamma.nrows() as f64;
        let r = out.gamma.ncols();
        let gram = out.gamma.transpose() * &out.gamma / d;
        assert!((gram - DMatrix::<f64>::identity(r, r)).norm() < tol);
        let psi = out.delta_g.transpose() * &out.delta_g / out.delta_g.nrows() as f64;
        for i in 0..r {
            for j in 0..r {
                if i != j {
                    assert!(psi[(i, j)].abs() < tol);
                }
            }
            if i > 0 {
                assert!(psi[(i, i)] < psi[(i - 1, i - 1)]);
            }
        }
    }

    #[test]
    fn random_inputs_satisfy_constraints() {
        let gamma = random(50, 2, 1);
        let dg = random(80, 2, 2);
        let out = normalize_factors(&gamma, &dg).unwrap();
        check_constraints(&out, 1e-10);
        let before = &gamma * dg.transpose();
        let after = &out.gamma * out.delta_g.transpose();
        assert!((&before - after).norm() < 1e-10 * (1.0 + before.norm()));
    }

    #[test]
    fn idempotent_up_to_sign() {
        let once = normalize_factors(&random(30, 3, 3), &random(40, 3, 4)).unwrap();
        let twice = normalize_factors(&once.gamma, &once.delta_g).unwrap();
        assert!((once.gamma - twice.gamma).norm() < 1e-10);
        assert!((once.delta_g - twice.delta_g).norm() < 1e-10);
    }

    #[test]
    fn single_factor_scaling() {
        let gamma = random(20, 1, 5) * 3.0;
        let dg = random(15, 1, 6);
        let out = normalize_factors(&gamma, &dg).unwrap();
        assert!(((out.gamma.transpose() * &out.gamma)[(0, 0)] / 20.0 - 1.0).abs() < 1e-12);
        assert!((&gamma * dg.transpose() - &out.gamma * out.delta_g.transpose()).norm() < 1e-10);
        assert!(out.min_gap.is_infinite());
    }

    #[test]
    fn tied_factors_flagged() {
        let mut gamma = DMatrix::zeros(4, 2);
        gamma[(0, 0)] = 2.0;
        gamma[(1, 1)] = 2.0;
        let mut dg = DMatrix::zeros(4, 2);
        dg[(0, 0)] = 1.0;
        dg[(1, 1)] = 1.0;
        let out = normalize_factors(&gamma, &dg).unwrap();
        assert!(out.flags.iter().any(|f| matches!(f, Flag::NonIdentifiable { .. })));
    }

    #[test]
    fn levels_roundtrip() {
        let dg = random(12, 2, 7);
        assert!((difference(&cumulate(&dg)) - &dg).norm() < 1e-12);
    }

    #[test]
    fn singular_loadings_rejected() {
        assert!(normalize_factors(&DMatrix::zeros(5, 2), &random(6, 2, 8)).is_err());
    }
}
