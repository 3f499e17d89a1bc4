use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::linalg::{sym_eigen_desc, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionOptions {
    pub r_g_max: usize,
    pub chi: f64,
    /// Eigenvalue perturbation; √d when absent.
    pub xi: Option<f64>,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        SelectionOptions {
            r_g_max: 8,
            chi: 0.2,
            xi: None,
        }
    }
}

impl SelectionOptions {
    pub fn validate(&self) -> Result<()> {
        if self.r_g_max < 2 {
            return Err(Error::validation("sfm.r_g_max", "must be at least 2"));
        }
        if !(self.chi > 0.0) {
            return Err(Error::validation("sfm.chi", "must be positive"));
        }
        if let Some(xi) = self.xi {
            if !(xi >= 0.0) {
                return Err(Error::validation("sfm.xi", "must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub r_g: usize,
    pub eigenvalues: Vec<f64>,
    pub ratios: Vec<f64>,
    pub flags: Vec<Flag>,
}

/// Perturbed eigenvalue ratio rule on eigenvalues sorted in decreasing order.
///
/// ER_k = (λ_k + ξ)/(λ_{k+1} + ξ); returns the largest k ≤ r_max − 1 with
/// ER_k > 1 + χ, or 1 when there is none.
pub fn select_r_g_from_eigenvalues(eigenvalues: &[f64], r_max: usize, xi: f64, chi: f64) -> Selection {
    let m = eigenvalues.len().min(r_max);
    let ratios: Vec<f64> = (0..m.saturating_sub(1))
        .map(|k| (eigenvalues[k] + xi) / (eigenvalues[k + 1] + xi))
        .collect();
    let mut flags = Vec::new();
    if eigenvalues.iter().filter(|&&v| v > 0.0).count() < 2 {
        flags.push(Flag::DegenerateSelection);
    }
    let r_g = ratios
        .iter()
        .enumerate()
        .filter(|(_, &er)| er > 1.0 + chi)
        .map(|(k, _)| k + 1)
        .max()
        .unwrap_or(1);
    Selection {
        r_g,
        eigenvalues: eigenvalues[..m].to_vec(),
        ratios,
        flags,
    }
}

/// Select the number of staleness factors from a d × (n+1) common component.
///
/// Eigenvalues are those of P P'/(n+1), so factor eigenvalues grow like d.
pub fn select_r_g(product: &DMatrix<f64>, options: &SelectionOptions) -> Result<Selection> {
    options.validate()?;
    let (d, cols) = product.shape();
    if d < 2 || cols == 0 {
        return Err(Error::Shape(format!("common component {d} × {cols} too small")));
    }
    let gram = symmetrize(&(product * product.transpose() / cols as f64));
    let (vals, _) = sym_eigen_desc(&gram);
    let xi = options.xi.unwrap_or((d as f64).sqrt());
    let vals: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    Ok(select_r_g_from_eigenvalues(&vals, options.r_g_max, xi, options.chi))
}
