use nalgebra::{DMatrix, DVector};

use super::SfmFit;
use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{spd_inverse, symmetrize};
use crate::sim::Panel;

/// Ridge applied to a singular plug-in information matrix.
pub const VARIANCE_RIDGE: f64 = 1e-10;
/// Two-sided 95% normal quantile.
pub const COVERAGE_Z: f64 = 1.959_963_984_540_054;

/// Feasible asymptotic variances of the fitted probabilities.
#[derive(Debug, Clone)]
pub struct SfmVariance {
    /// Per asset, (r_x + r_g) square.
    pub omega_u: Vec<DMatrix<f64>>,
    /// Per time point, r_g square.
    pub omega_gamma: Vec<DMatrix<f64>>,
    /// (n+1) × d values of Ω^{(p)}.
    pub omega_p: DMatrix<f64>,
    /// ω²_nd = min(n, d).
    pub omega_nd2: f64,
    pub flags: Vec<Flag>,
}

impl SfmVariance {
    /// Standard error √Ω^{(p)}/ω_nd of p̂ at (j, i).
    pub fn std_error(&self, j: usize, i: usize) -> f64 {
        (self.omega_p[(j, i)] / self.omega_nd2).sqrt()
    }

    /// Nominal 95% interval for p at (j, i).
    pub fn interval(&self, p_hat: f64, j: usize, i: usize) -> (f64, f64) {
        let h = COVERAGE_Z * self.std_error(j, i);
        (p_hat - h, p_hat + h)
    }
}

fn covariate_vector(panel: &Panel, fit: &SfmFit, j: usize, i: usize) -> DVector<f64> {
    let r_x = panel.r_x();
    let r_g = fit.r_g();
    DVector::from_fn(r_x + r_g, |k, _| {
        if k < r_x {
            panel.x[k][(j, i)]
        } else {
            fit.g_hat[(j, k - r_x)]
        }
    })
}

/// Plug-in Ω̂_u,i, Ω̂_γ,j and Ω̂^{(p)} with Fisher weights ψ²/(Ψ(1−Ψ)).
pub fn variance_p(fit: &SfmFit, panel: &Panel) -> Result<SfmVariance> {
    let (rows, d) = panel.b.shape();
    if fit.z_hat.shape() != (rows, d) || fit.a_hat.ncols() != panel.r_x() {
        return Err(Error::Shape("fit does not match the panel".into()));
    }
    let kind = fit.link;
    let n = rows - 1;
    let r_x = panel.r_x();
    let r_g = fit.r_g();
    let k = r_x + r_g;
    let omega_nd2 = n.min(d) as f64;
    let weights = fit.z_hat.map(|z| kind.fisher_weight(z));
    let mut flags = Vec::new();

    let mut omega_u = Vec::with_capacity(d);
    let mut omega_u_inv = Vec::with_capacity(d);
    for i in 0..d {
        let mut m = DMatrix::zeros(k, k);
        for j in 0..rows {
            let u = covariate_vector(panel, fit, j, i);
            m += &u * u.transpose() * weights[(j, i)];
        }
        m /= rows as f64;
        let m = symmetrize(&m);
        let (inv, ridge) = spd_inverse(&m, VARIANCE_RIDGE)?;
        if ridge > 0.0 {
            flags.push(Flag::Ridge {
                context: format!("Omega_u asset {i}"),
                lambda: ridge,
            });
        }
        omega_u.push(m);
        omega_u_inv.push(inv);
    }

    let mut omega_gamma = Vec::with_capacity(rows);
    let mut omega_gamma_inv = Vec::with_capacity(rows);
    for j in 0..rows {
        let mut m = DMatrix::zeros(r_g, r_g);
        for i in 0..d {
            let gi = fit.gamma_hat.row(i).transpose();
            m += &gi * gi.transpose() * weights[(j, i)];
        }
        m /= d as f64;
        let m = symmetrize(&m);
        let (inv, ridge) = spd_inverse(&m, VARIANCE_RIDGE)?;
        if ridge > 0.0 {
            flags.push(Flag::Ridge {
                context: format!("Omega_gamma time {j}"),
                lambda: ridge,
            });
        }
        omega_gamma.push(m);
        omega_gamma_inv.push(inv);
    }

    let mut omega_p = DMatrix::zeros(rows, d);
    for i in 0..d {
        let gi = fit.gamma_hat.row(i).transpose();
        for j in 0..rows {
            let u = covariate_vector(panel, fit, j, i);
            let psi = kind.pdf(fit.z_hat[(j, i)]);
            let qu = (u.transpose() * &omega_u_inv[i] * &u)[(0, 0)];
            let qg = if r_g > 0 {
                (gi.transpose() * &omega_gamma_inv[j] * &gi)[(0, 0)]
            } else {
                0.0
            };
            omega_p[(j, i)] = psi * psi * (omega_nd2 / n as f64 * qu + omega_nd2 / d as f64 * qg);
        }
    }
    Ok(SfmVariance {
        omega_u,
        omega_gamma,
        omega_p,
        omega_nd2,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::LinkKind;

    #[test]
    fn homogeneous_closed_form() {
        let (n, d) = (5, 10);
        let rows = n + 1;
        let fit = SfmFit {
            link: LinkKind::Logit,
            a_hat: DMatrix::zeros(d, 1),
            gamma_hat: DMatrix::zeros(d, 0),
            g_hat: DMatrix::zeros(rows, 0),
            delta_g_hat: DMatrix::zeros(rows, 0),
            p_hat: DMatrix::from_element(rows, d, 0.5),
            z_hat: DMatrix::zeros(rows, d),
            loglik_trace: vec![],
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            change: 0.0,
            flags: vec![],
        };
        let panel = Panel {
            b: DMatrix::zeros(rows, d),
            x: vec![DMatrix::from_element(rows, d, 1.0)],
            y_obs: None,
            y_eff: None,
            delta: 0.1,
        };
        let v = variance_p(&fit, &panel).unwrap();
        assert!((v.omega_u[0][(0, 0)] - 0.25).abs() < 1e-15);
        for val in v.omega_p.iter() {
            assert!((val - 0.25).abs() < 1e-12);
        }
    }
}
