//! Staleness factor model: maximum-likelihood estimation of the loadings,
//! the latent staleness factors and the fitted staleness probabilities.

mod fit;
mod functional;
mod init;
mod likelihood;
mod normalize;
mod select;
mod variance;

pub use fit::{fit, fit_from, FactorUpdate, FitOptions};
pub use functional::{integrated_functional, FunctionalEstimate};
pub use init::{block_probabilities, factor_pca, initialize, initialize_from_probabilities, InitialValues};
pub use likelihood::{log_likelihood, log_likelihood_levels, single_index_levels};
pub use normalize::{cumulate, difference, normalize_factors, Normalized};
pub use select::{select_r_g, select_r_g_from_eigenvalues, Selection, SelectionOptions};
pub use variance::{variance_p, SfmVariance, COVERAGE_Z};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::flags::Flag;
use crate::link::LinkKind;

/// Result of a staleness-factor-model fit.
#[derive(Debug, Clone)]
pub struct SfmFit {
    pub link: LinkKind,
    /// d × r_x covariate loadings.
    pub a_hat: DMatrix<f64>,
    /// d × r_g factor loadings.
    pub gamma_hat: DMatrix<f64>,
    /// (n+1) × r_g factor levels.
    pub g_hat: DMatrix<f64>,
    /// (n+1) × r_g factor increments, row 0 holding g_0.
    pub delta_g_hat: DMatrix<f64>,
    /// (n+1) × d fitted probabilities.
    pub p_hat: DMatrix<f64>,
    /// (n+1) × d fitted single indices.
    pub z_hat: DMatrix<f64>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Euclidean norm of the full score at the returned iterate.
    pub gradient_norm: f64,
    /// Last value of the parameter-change criterion.
    pub change: f64,
    pub flags: Vec<Flag>,
}

impl SfmFit {
    pub fn r_g(&self) -> usize {
        self.gamma_hat.ncols()
    }

    pub fn d(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn n(&self) -> usize {
        self.g_hat.nrows() - 1
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            link: self.link,
            r_g: self.r_g(),
            iterations: self.iterations,
            converged: self.converged,
            gradient_norm: self.gradient_norm,
            change: self.change,
            loglik: self.loglik_trace.last().copied().unwrap_or(f64::NAN),
            loglik_trace: self.loglik_trace.clone(),
            flags: self.flags.clone(),
        }
    }
}

/// JSON-friendly digest of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub link: LinkKind,
    pub r_g: usize,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub change: f64,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub flags: Vec<Flag>,
}
