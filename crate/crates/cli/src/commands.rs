use std::path::{Path, PathBuf};

use serde::Serialize;

use stalevol::config::RunConfig;
use stalevol::io::{read_matrix, read_panel, write_json, write_matrix, write_panel, write_truth, RowIndex};
use stalevol::portfolio::min_variance_path;
use stalevol::replicate::{
    portfolio_experiment, replicate_table1 as run_table1, select_factor_count, with_pool, PORTFOLIO_TAGS,
};
use stalevol::sfm::fit;
use stalevol::sim::simulate_world;
use stalevol::vol::{estimate, PriceRankSelection, RankChoice, VolSet};
use stalevol::{Error, Flag, LinkKind, Result};

use crate::manifest::Recorder;

fn all_replications(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.sim.replications as u64).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig, replication: u64, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("simulate", cfg, out, vec![replication])?;
    let (panel, truth) = rec.stage("simulate", || simulate_world(&cfg.sim, replication))?;
    let files = rec.stage("write", || {
        let mut files = write_panel(&out.join("panel"), &panel)?;
        files.extend(write_truth(&out.join("truth"), &truth)?);
        Ok(files)
    })?;
    rec.files(files);
    rec.finish()
}

#[derive(Serialize)]
struct FitSummary {
    link: LinkKind,
    r_g: usize,
    /// Present when the factor count was selected from the data.
    r_g_selected: Option<usize>,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
    change: f64,
    loglik: f64,
    loglik_trace: Vec<f64>,
    flags: Vec<Flag>,
}

pub fn fit_sfm(cfg: &RunConfig, panel_dir: &Path, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("fit-sfm", cfg, out, Vec::new())?;
    let panel = rec.stage("read", || read_panel(panel_dir))?;
    let link = cfg.fit_link();
    let selected = match cfg.sfm.r_g {
        RankChoice::Fixed(_) => None,
        RankChoice::Auto(_) => Some(rec.stage("select", || select_factor_count(cfg, &panel, link))?),
    };
    let r_g = match cfg.sfm.r_g {
        RankChoice::Fixed(k) => k,
        RankChoice::Auto(_) => selected.unwrap_or(1),
    };
    let f = rec.stage("fit", || fit(&panel, link, r_g, &cfg.sfm.fit_options()))?;

    let time = RowIndex::Time(panel.delta);
    let asset = RowIndex::Id("asset");
    let items = [
        ("a_hat.csv", &f.a_hat, asset, "covariate"),
        ("gamma_hat.csv", &f.gamma_hat, asset, "factor"),
        ("g_hat.csv", &f.g_hat, time, "factor"),
        ("delta_g_hat.csv", &f.delta_g_hat, time, "factor"),
        ("z_hat.csv", &f.z_hat, time, "asset"),
        ("p_hat.csv", &f.p_hat, time, "asset"),
    ];
    let mut files = Vec::new();
    for (name, m, rows, prefix) in items {
        let p = out.join(name);
        write_matrix(&p, m, rows, prefix)?;
        files.push(p);
    }
    let summary = FitSummary {
        link,
        r_g,
        r_g_selected: selected,
        iterations: f.iterations,
        converged: f.converged,
        gradient_norm: f.gradient_norm,
        change: f.change,
        loglik: f.loglik_trace.last().copied().unwrap_or(f64::NAN),
        loglik_trace: f.loglik_trace.clone(),
        flags: f.flags.clone(),
    };
    let p = out.join("summary.json");
    write_json(&p, &summary)?;
    files.push(p);
    rec.flags(f.flags.iter().cloned());
    rec.files(files);
    rec.finish()
}

#[derive(Serialize)]
struct VolSummary {
    k_n: usize,
    r: usize,
    blocks: usize,
    dropped_increments: usize,
    corrected: bool,
    rank_selection: Option<PriceRankSelection>,
    flags: Vec<Flag>,
}

fn write_set(out: &Path, prefix: &str, set: &VolSet, files: &mut Vec<PathBuf>) -> Result<()> {
    let last = set.spot_sys.len() - 1;
    let asset = RowIndex::Id("asset");
    let spot_last = set.total_spot(last);
    let int_idio = &set.int_idio_thr;
    for (name, m) in [
        ("int_sys", &set.int_sys),
        ("int_idio", int_idio),
        ("int_total", &set.total_int),
        ("spot_total_last", &spot_last),
        ("spot_precision_last", &set.precision_spot),
    ] {
        let p = out.join(format!("{prefix}_{name}.csv"));
        write_matrix(&p, m, asset, "asset")?;
        files.push(p);
    }
    Ok(())
}

pub fn fit_vol(cfg: &RunConfig, panel_dir: &Path, p_hat: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("fit-vol", cfg, out, Vec::new())?;
    let panel = rec.stage("read", || read_panel(panel_dir))?;
    let prices = panel.y_obs.as_ref().ok_or_else(|| {
        Error::Input(format!(
            "missing input file {}",
            panel_dir.join(stalevol::io::Y_OBS_FILE).display()
        ))
    })?;
    let p = p_hat.map(read_matrix).transpose()?;
    let est = rec.stage("estimate", || estimate(prices, panel.delta, &cfg.vol, p.as_ref()))?;
    let mut files = Vec::new();
    write_set(out, "uncorrected", &est.raw, &mut files)?;
    if let Some(c) = &est.corrected {
        write_set(out, "corrected", c, &mut files)?;
    }
    let summary = VolSummary {
        k_n: est.k_n,
        r: est.r,
        blocks: est.anchors.len(),
        dropped_increments: est.dropped,
        corrected: est.corrected.is_some(),
        rank_selection: est.rank_selection.clone(),
        flags: est.flags.clone(),
    };
    let path = out.join("summary.json");
    write_json(&path, &summary)?;
    files.push(path);
    rec.flags(est.flags.iter().cloned());
    rec.files(files);
    rec.finish()
}

#[derive(Serialize)]
struct EqualWeight {
    replication: u64,
    oos_risk: f64,
}

#[derive(Serialize)]
struct PortfolioSummaryRow {
    estimator: String,
    c: f64,
    mean_objective: f64,
    mean_oos_risk: f64,
}

pub fn portfolio(cfg: &RunConfig, cov: Option<&Path>, out: &Path) -> Result<PathBuf> {
    if let Some(path) = cov {
        return portfolio_single(cfg, path, out);
    }
    let mut rec = Recorder::new("portfolio", cfg, out, all_replications(cfg))?;
    let reps = rec.stage("experiment", || {
        with_pool(cfg.replicate.jobs, || portfolio_experiment(cfg))?
    })?;
    let points: Vec<_> = reps.iter().flat_map(|r| r.points.iter().cloned()).collect();
    let equal: Vec<_> = reps
        .iter()
        .map(|r| EqualWeight {
            replication: r.replication,
            oos_risk: r.equal_weight_risk,
        })
        .collect();
    let mut summary = Vec::new();
    for tag in PORTFOLIO_TAGS {
        for &c in &cfg.portfolio.exposure_grid {
            let sel: Vec<_> = points.iter().filter(|p| p.estimator == tag && p.c == c).collect();
            let k = sel.len() as f64;
            summary.push(PortfolioSummaryRow {
                estimator: tag.into(),
                c,
                mean_objective: sel.iter().map(|p| p.objective).sum::<f64>() / k,
                mean_oos_risk: sel.iter().map(|p| p.oos_risk).sum::<f64>() / k,
            });
        }
    }
    let files = vec![
        out.join("portfolio.csv"),
        out.join("equal_weight.csv"),
        out.join("portfolio_summary.csv"),
    ];
    write_csv(&files[0], &points)?;
    write_csv(&files[1], &equal)?;
    write_csv(&files[2], &summary)?;
    rec.files(files);
    rec.finish()
}

fn portfolio_single(cfg: &RunConfig, path: &Path, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("portfolio", cfg, out, Vec::new())?;
    let cov = read_matrix(path)?;
    let path_results = rec.stage("solve", || {
        min_variance_path(&cov, &cfg.portfolio.exposure_grid, &cfg.portfolio)
    })?;
    let file = out.join("weights.csv");
    let mut w = csv::Writer::from_path(&file)?;
    let d = cov.nrows();
    w.write_record(
        ["c", "objective", "kkt_residual"]
            .into_iter()
            .map(String::from)
            .chain((1..=d).map(|i| format!("asset_{i}"))),
    )?;
    for r in &path_results {
        w.write_record(
            [r.c, r.objective, r.kkt_residual]
                .iter()
                .chain(&r.weights)
                .map(|v| format!("{v:?}")),
        )?;
    }
    w.flush()?;
    rec.flags(path_results.iter().flat_map(|r| r.flags.iter().cloned()));
    rec.files([file]);
    rec.finish()
}

pub fn replicate_table1(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let mut rec = Recorder::new("replicate-table1", cfg, out, all_replications(cfg))?;
    let table = rec.stage("replicate", || with_pool(cfg.replicate.jobs, || run_table1(cfg))?)?;
    let path = out.join("table1.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "d",
        "link",
        "freq",
        "replications",
        "PC",
        "RMSE_z",
        "spot_clean",
        "int_clean",
        "spot_stale_vs_p",
        "int_stale_vs_p",
        "spot_stale",
        "int_stale",
        "spot_corrected",
        "int_corrected",
    ])?;
    for r in &table.rows {
        let mut rec = vec![
            r.d.to_string(),
            r.link.to_string(),
            r.freq.clone(),
            r.replications.to_string(),
        ];
        rec.extend(
            [
                r.pc,
                r.rmse_z,
                r.spot_clean,
                r.int_clean,
                r.spot_stale_vs_p,
                r.int_stale_vs_p,
                r.spot_stale,
                r.int_stale,
                r.spot_corrected,
                r.int_corrected,
            ]
            .iter()
            .map(|v| format!("{v:?}")),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    let reps_path = out.join("replications.csv");
    write_csv(&reps_path, &table.replications)?;
    rec.files([path, reps_path]);
    rec.finish()
}
