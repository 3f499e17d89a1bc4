//! stalevol command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stalevol::config::RunConfig;
use stalevol::vol::RankChoice;
use stalevol::{Error, LinkKind};

mod commands;
mod manifest;

#[derive(Parser)]
#[command(
    name = "stalevol",
    version,
    about = "Staleness-corrected high-frequency volatility matrices"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the JSON configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    link: Option<LinkArg>,
    /// Number of staleness factors: an integer or `auto`.
    #[arg(long, global = true)]
    rg: Option<RankChoice>,
    /// Number of price factors: an integer or `auto`.
    #[arg(long, global = true)]
    r: Option<RankChoice>,
    /// Block length of the local PCA.
    #[arg(long, global = true)]
    kn: Option<usize>,
    /// Exponent of the eigenvalue-ratio perturbation.
    #[arg(long, global = true)]
    chi: Option<f64>,
    /// Constant of the idiosyncratic threshold.
    #[arg(long, global = true)]
    threshold_c: Option<f64>,
    /// Comma-separated gross-exposure bounds.
    #[arg(long, global = true, value_delimiter = ',')]
    exposure_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LinkArg {
    Logit,
    Probit,
}

impl From<LinkArg> for LinkKind {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Logit => LinkKind::Logit,
            LinkArg::Probit => LinkKind::Probit,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one panel with its ground truth.
    Simulate {
        /// Replication index of the random substreams.
        #[arg(long, default_value_t = 0)]
        replication: u64,
    },
    /// Fit the staleness factor model to a panel directory.
    FitSfm {
        #[arg(long)]
        panel: PathBuf,
    },
    /// Estimate spot and integrated volatility matrices from a panel directory.
    FitVol {
        #[arg(long)]
        panel: PathBuf,
        /// Fitted probabilities (p_hat.csv from fit-sfm); enables the correction.
        #[arg(long)]
        p_hat: Option<PathBuf>,
    },
    /// Two-window minimum-variance experiment, or a single solve with --cov.
    Portfolio {
        /// Covariance matrix CSV to solve over the exposure grid.
        #[arg(long)]
        cov: Option<PathBuf>,
    },
    /// Monte Carlo replication of the simulation table.
    ReplicateTable1 {
        /// Paper-scale run: 200 replications.
        #[arg(long)]
        full_scale: bool,
    },
}

impl Common {
    fn resolve(&self) -> stalevol::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_path(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.replicate.jobs = Some(j);
        }
        if let Some(l) = self.link {
            let l = LinkKind::from(l);
            cfg.sim.link = l;
            cfg.sfm.link = Some(l);
            for row in &mut cfg.replicate.rows {
                row.link = l;
            }
        }
        if let Some(r) = self.rg {
            cfg.sfm.r_g = r;
        }
        if let Some(r) = self.r {
            cfg.vol.r = r;
        }
        if let Some(k) = self.kn {
            cfg.vol.k_n = Some(k);
        }
        if let Some(c) = self.chi {
            cfg.sfm.chi = c;
        }
        if let Some(c) = self.threshold_c {
            cfg.vol.threshold_c = c;
        }
        if let Some(g) = &self.exposure_grid {
            cfg.portfolio.exposure_grid = g.clone();
        }
        Ok(cfg)
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Validation { .. } => "validation",
        Error::Argument(_) => "argument",
        Error::Shape(_) => "shape",
        Error::Input(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => "input",
        Error::Domain(_) => "domain",
        Error::Degenerate(_) => "degenerate",
        Error::Rank(_) => "rank",
    }
}

fn fail(kind: &str, field: Option<&str>, message: String, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": { "kind": kind, "field": field, "message": message }, "exit_code": code });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", None, e.to_string().trim().to_string(), 2),
    };
    let result = cli.common.resolve().and_then(|cfg| {
        cfg.validate()?;
        let out = &cli.common.out;
        match &cli.command {
            Command::Simulate { replication } => commands::simulate(&cfg, *replication, out),
            Command::FitSfm { panel } => commands::fit_sfm(&cfg, panel, out),
            Command::FitVol { panel, p_hat } => commands::fit_vol(&cfg, panel, p_hat.as_deref(), out),
            Command::Portfolio { cov } => commands::portfolio(&cfg, cov.as_deref(), out),
            Command::ReplicateTable1 { full_scale } => {
                let mut cfg = cfg.clone();
                if *full_scale {
                    cfg.sim.replications = 200;
                }
                commands::replicate_table1(&cfg, out)
            }
        }
    });
    match result {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let field = match &e {
                Error::Validation { field, .. } => Some(field.as_str()),
                _ => None,
            };
            let code = if e.is_validation() { 2 } else { 3 };
            fail(error_kind(&e), field, e.to_string(), code)
        }
    }
}
