use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{sym_eigen_desc, symmetrize};

/// Smallest admissible eigenvalue of the idiosyncratic matrix.
pub const IDIO_EIG_FLOOR: f64 = 1e-10;

/// Total matrix sys + idio and its inverse via a Woodbury update.
///
/// The idiosyncratic part is repaired with a ridge when its smallest
/// eigenvalue is below `IDIO_EIG_FLOOR`.
pub fn total_and_precision(sys: &DMatrix<f64>, idio: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<Flag>)> {
    let d = sys.nrows();
    if sys.shape() != (d, d) || idio.shape() != (d, d) {
        return Err(Error::Shape("sys and idio must be square of equal size".into()));
    }
    let mut flags = Vec::new();
    let mut idio = symmetrize(idio);
    let (ivals, _) = sym_eigen_desc(&idio);
    let lmin = ivals[d - 1];
    if lmin <= IDIO_EIG_FLOOR {
        let lambda = lmin.abs() + 1e-8;
        for i in 0..d {
            idio[(i, i)] += lambda;
        }
        flags.push(Flag::Ridge {
            context: "idiosyncratic volatility".into(),
            lambda,
        });
    }
    let sys = symmetrize(sys);
    let total = &sys + &idio;
    let idio_inv = idio
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("idiosyncratic matrix not positive definite after ridge".into()))?
        .inverse();

    // sys = U Λ U' over the numerically non-zero spectrum.
    let (vals, vecs) = sym_eigen_desc(&sys);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let keep: Vec<usize> = (0..d).filter(|&k| vals[k].abs() > 1e-14 * scale).collect();
    if keep.is_empty() {
        return Ok((total, symmetrize(&idio_inv), flags));
    }
    let u = DMatrix::from_fn(d, keep.len(), |i, c| vecs[(i, keep[c])]);
    let du = &idio_inv * &u;
    let mut core = u.transpose() * &du;
    for (c, &k) in keep.iter().enumerate() {
        core[(c, c)] += 1.0 / vals[k];
    }
    let core_inv = core
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("total volatility matrix is singular".into()))?;
    let precision = &idio_inv - &du * core_inv * du.transpose();
    Ok((total, symmetrize(&precision), flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identity_idio_without_factors() {
        let (_, p, flags) = total_and_precision(&DMatrix::zeros(4, 4), &DMatrix::identity(4, 4)).unwrap();
        assert!((p - DMatrix::<f64>::identity(4, 4)).amax() < 1e-15);
        assert!(flags.is_empty());
    }

    #[test]
    fn two_by_two_hand_case() {
        let sys = DMatrix::from_element(2, 2, 1.0);
        let (t, p, _) = total_and_precision(&sys, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(t, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let expect = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!((p - expect).amax() < 1e-14);
    }

    #[test]
    fn woodbury_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(d, r) in &[(5, 1), (40, 3), (150, 6)] {
            let s = DMatrix::from_fn(d, r, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let a = DMatrix::from_fn(d, d, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
            let idio = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
            let sys = &s * s.transpose();
            let (t, p, _) = total_and_precision(&sys, &idio).unwrap();
            let direct = t.clone().try_inverse().unwrap();
            assert!((&p - &direct).norm() / direct.norm() < 1e-8);
        }
    }

    #[test]
    fn singular_idio_is_repaired() {
        let idio = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, 2.0]));
        let (_, _, flags) = total_and_precision(&DMatrix::zeros(3, 3), &idio).unwrap();
        assert!(matches!(flags[0], Flag::Ridge { .. }));
    }
}
