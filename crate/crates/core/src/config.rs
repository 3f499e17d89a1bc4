//! Run configuration: one JSON document with sim/sfm/vol/portfolio/replicate sections.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::portfolio::PortfolioConfig;
use crate::sfm::{FactorUpdate, FitOptions, SelectionOptions};
use crate::sim::SimConfig;
use crate::vol::{RankChoice, VolConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub sfm: SfmConfig,
    pub vol: VolConfig,
    pub portfolio: PortfolioConfig,
    pub replicate: ReplicateConfig,
}

/// Staleness factor model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfmConfig {
    /// Link used for fitting; the simulator's link when absent.
    pub link: Option<LinkKind>,
    pub r_g: RankChoice,
    pub r_g_max: usize,
    pub chi: f64,
    pub xi: Option<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub factor_update: FactorUpdate,
    pub kbar: Option<usize>,
    pub z_cap: f64,
}

impl Default for SfmConfig {
    fn default() -> Self {
        let fit = FitOptions::default();
        let sel = SelectionOptions::default();
        SfmConfig {
            link: None,
            r_g: RankChoice::Fixed(3),
            r_g_max: sel.r_g_max,
            chi: sel.chi,
            xi: sel.xi,
            tol: fit.tol,
            max_sweeps: fit.max_sweeps,
            newton_tol: fit.newton_tol,
            newton_max: fit.newton_max,
            factor_update: fit.factor_update,
            kbar: fit.kbar,
            z_cap: fit.z_cap,
        }
    }
}

impl SfmConfig {
    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            tol: self.tol,
            max_sweeps: self.max_sweeps,
            newton_tol: self.newton_tol,
            newton_max: self.newton_max,
            factor_update: self.factor_update,
            kbar: self.kbar,
            z_cap: self.z_cap,
        }
    }

    pub fn selection_options(&self) -> SelectionOptions {
        SelectionOptions {
            r_g_max: self.r_g_max,
            chi: self.chi,
            xi: self.xi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RankChoice::Fixed(0) = self.r_g {
            return Err(Error::validation("sfm.r_g", "must be at least 1 or `auto`"));
        }
        self.fit_options().validate()?;
        self.selection_options().validate()
    }
}

/// One summary-table row: asset count, link and number of increments over the fixed horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub d: usize,
    pub n: usize,
    pub link: LinkKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplicateConfig {
    /// Worker threads; all available cores when absent.
    pub jobs: Option<usize>,
    pub rows: Vec<TableRow>,
    /// (d, n) pairs for the convergence-trend study.
    pub rate_grid: Vec<(usize, usize)>,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            jobs: None,
            rows: vec![TableRow {
                d: 100,
                n: 1170,
                link: LinkKind::Logit,
            }],
            rate_grid: vec![(50, 300), (100, 1170), (200, 2340)],
        }
    }
}

impl ReplicateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.jobs == Some(0) {
            return Err(Error::validation("replicate.jobs", "must be at least 1"));
        }
        if self.rows.iter().any(|r| r.d < 2 || r.n < 2) {
            return Err(Error::validation("replicate.rows", "every row needs d ≥ 2 and n ≥ 2"));
        }
        if self.rate_grid.iter().any(|&(d, n)| d < 2 || n < 2) {
            return Err(Error::validation(
                "replicate.rate_grid",
                "every point needs d ≥ 2 and n ≥ 2",
            ));
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parse and validate a JSON document; unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::validation(json_field(&e), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Input(format!("missing config file {}", path.display())));
        }
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.sfm.validate()?;
        self.vol.validate()?;
        self.portfolio.validate()?;
        self.replicate.validate()
    }

    /// Link used by the estimators.
    pub fn fit_link(&self) -> LinkKind {
        self.sfm.link.unwrap_or(self.sim.link)
    }
}

/// Best-effort field name from a serde error message.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "duplicate field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "config".into()
}
