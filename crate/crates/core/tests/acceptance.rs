//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Set `STALEVOL_ACCEPTANCE_STRICT=1` to exit non-zero when any criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use stalevol::config::RunConfig;
use stalevol::link::{link_deriv, link_eval, link_inverse};
use stalevol::portfolio::{min_variance, oos_evaluate, PortfolioConfig};
use stalevol::replicate::{
    coverage_rate, portfolio_experiment, rate_trend, replicate_table1, with_pool, ReplicationMetrics,
};
use stalevol::rng::substream_raw;
use stalevol::sfm::{fit, log_likelihood, select_r_g_from_eigenvalues, FitOptions};
use stalevol::sim::{apply_staleness, simulate_world, Panel};
use stalevol::vol::{estimate, poet_threshold, stale_factor, staleness_correction, Shrink, VolSet};
use stalevol::LinkKind;

// Tolerances pinned from the acceptance criteria.
const PC_MIN: f64 = 0.85;
const RMSE_BAND: (f64, f64) = (0.55, 0.75);
const CLEAN_SIGMA_MAX: f64 = 0.03;
const CORRECTED_RATIO_MAX: f64 = 0.5;
const BIAS_BAND: (f64, f64) = (0.511, 0.532);
const BIAS_INCREMENTS: usize = 1_000_000;
const ASCENT_SLACK: f64 = 1e-10;
const GRAD_SCALE: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-6;
const GAMMA_GRAM_TOL: f64 = 1e-8;
const DELTA_G_OFFDIAG_TOL: f64 = 1e-10;
const COVERAGE_BAND: (f64, f64) = (0.88, 0.99);
const IDENTITY_TOL: f64 = 1e-15;
const PORTFOLIO_WIN_RATE: f64 = 0.70;
const PORTFOLIO_C_MIN: f64 = 2.0;
const OBJECTIVE_SLACK: f64 = 1e-9;

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} criterion {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures.push(id.to_string());
        }
    }
}

fn criterion_1_4(report: &mut Report, cfg: &RunConfig) -> Vec<ReplicationMetrics> {
    let table = replicate_table1(cfg).expect("table replication");
    let row = &table.rows[0];
    let ok = row.pc >= PC_MIN
        && (RMSE_BAND.0..=RMSE_BAND.1).contains(&row.rmse_z)
        && row.int_clean <= CLEAN_SIGMA_MAX
        && row.int_corrected <= CORRECTED_RATIO_MAX * row.int_stale;
    report.line(
        "1",
        ok,
        format!(
            "d={} {} {} reps={}: PC {:.3} (>= {PC_MIN}), RMSE_z {:.3} (in [{}, {}]), clean |S-S| {:.4} (<= {CLEAN_SIGMA_MAX}), corrected {:.4} vs uncorrected {:.4} (ratio {:.3} <= {CORRECTED_RATIO_MAX}); spot clean {:.3}, stale vs V(p) {:.3}, stale {:.3}, corrected {:.3}, |S-S(p)| {:.4}",
            row.d,
            row.link,
            row.freq,
            row.replications,
            row.pc,
            row.rmse_z,
            RMSE_BAND.0,
            RMSE_BAND.1,
            row.int_clean,
            row.int_corrected,
            row.int_stale,
            row.int_corrected / row.int_stale,
            row.spot_clean,
            row.spot_stale_vs_p,
            row.spot_stale,
            row.spot_corrected,
            row.int_stale_vs_p,
        ),
    );
    table.replications
}

fn bias_factor_ratio(seed: u64) -> f64 {
    let (p_i, p_m, rho) = (0.2, 0.4, 0.5);
    let mut rng = substream_raw(seed, 0, 77);
    let n = BIAS_INCREMENTS;
    let mut y = DMatrix::zeros(n + 1, 2);
    let mut b = DMatrix::zeros(n + 1, 2);
    for j in 1..=n {
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        y[(j, 0)] = y[(j - 1, 0)] + e1;
        y[(j, 1)] = y[(j - 1, 1)] + rho * e1 + (1.0 - rho * rho).sqrt() * e2;
        b[(j, 0)] = if rng.random::<f64>() <= p_i { 1.0 } else { 0.0 };
        b[(j, 1)] = if rng.random::<f64>() <= p_m { 1.0 } else { 0.0 };
    }
    let obs = apply_staleness(&y, &b).expect("staleness");
    let (mut s01, mut m0, mut m1) = (0.0, 0.0, 0.0);
    for j in 1..=n {
        let r0 = obs[(j, 0)] - obs[(j - 1, 0)];
        let r1 = obs[(j, 1)] - obs[(j - 1, 1)];
        s01 += r0 * r1;
        m0 += r0;
        m1 += r1;
    }
    let nf = n as f64;
    let cov = (s01 - m0 * m1 / nf) / (nf - 1.0);
    cov / rho
}

fn criterion_2(report: &mut Report) {
    let ratio = bias_factor_ratio(2024);
    let phi = stale_factor(0.2, 0.4);
    report.line(
        "2",
        (BIAS_BAND.0..=BIAS_BAND.1).contains(&ratio),
        format!(
            "stale/true covariance {ratio:.4} (phi {phi:.4}, band [{}, {}], {BIAS_INCREMENTS} increments)",
            BIAS_BAND.0, BIAS_BAND.1
        ),
    );
}

/// Single-asset logistic regression by Newton's method.
fn logistic_oracle(x: &[f64], b: &[f64]) -> f64 {
    let mut a = 0.0;
    for _ in 0..200 {
        let (mut s, mut h) = (0.0, 0.0);
        for (xv, bv) in x.iter().zip(b) {
            let p = 1.0 / (1.0 + (-a * xv).exp());
            s += (bv - p) * xv;
            h += p * (1.0 - p) * xv * xv;
        }
        let step = s / h;
        a += step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    a
}

fn covariate_only_error() -> f64 {
    let (n, d) = (600, 8);
    let mut rng = substream_raw(99, 0, 5);
    let x = DMatrix::from_fn(n + 1, d, |_, _| rng.random_range(-1.0..1.5));
    let b = DMatrix::from_fn(n + 1, d, |j, i| {
        let p = LinkKind::Logit.cdf((-1.0 + 0.3 * i as f64) * x[(j, i)]);
        if rng.random::<f64>() <= p {
            1.0
        } else {
            0.0
        }
    });
    let panel = Panel {
        b,
        x: vec![x],
        y_obs: None,
        y_eff: None,
        delta: 1.0 / n as f64,
    };
    let f = fit(&panel, LinkKind::Logit, 0, &FitOptions::default()).expect("covariate fit");
    (0..d)
        .map(|i| {
            let xi: Vec<f64> = panel.x[0].column(i).iter().copied().collect();
            let bi: Vec<f64> = panel.b.column(i).iter().copied().collect();
            (f.a_hat[(i, 0)] - logistic_oracle(&xi, &bi)).abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_3(report: &mut Report, reps: &[ReplicationMetrics]) {
    let monotone = reps.iter().all(|r| r.loglik_monotone);
    let grad_ratio = reps
        .iter()
        .map(|r| r.gradient_norm / (GRAD_SCALE * (r.d * (r.n + 1)) as f64))
        .fold(0.0, f64::max);
    let oracle = covariate_only_error();
    let converged = reps.iter().filter(|r| r.converged).count();
    report.line(
        "3",
        monotone && grad_ratio <= 1.0 && oracle <= ORACLE_TOL,
        format!(
            "trace non-decreasing (slack {ASCENT_SLACK}) on {}/{} fits; worst exit gradient / (1e-6 d(n+1)) = {grad_ratio:.3e} (<= 1); {converged}/{} stopped by the parameter-change rule; covariate-only oracle error {oracle:.2e} (<= {ORACLE_TOL})",
            reps.iter().filter(|r| r.loglik_monotone).count(),
            reps.len(),
            reps.len(),
        ),
    );
}

fn criterion_4(report: &mut Report, reps: &[ReplicationMetrics]) {
    let gram = reps.iter().map(|r| r.gamma_gram_error).fold(0.0, f64::max);
    let off = reps.iter().map(|r| r.delta_g_offdiag).fold(0.0, f64::max);
    report.line(
        "4",
        gram <= GAMMA_GRAM_TOL && off <= DELTA_G_OFFDIAG_TOL,
        format!("worst |G'G/d - I|_F {gram:.2e} (<= {GAMMA_GRAM_TOL}), worst off-diagonal of dG'dG/(n+1) {off:.2e} (<= {DELTA_G_OFFDIAG_TOL}) over {} fits", reps.len()),
    );
}

fn criterion_5(report: &mut Report, cfg: &RunConfig) {
    let points = rate_trend(cfg).expect("rate grid");
    let strictly = |f: fn(&stalevol::replicate::RatePoint) -> f64| points.windows(2).all(|w| f(&w[1]) < f(&w[0]));
    let p_ok = strictly(|p| p.mean_abs_p);
    let s_ok = strictly(|p| p.int_corrected_rel);
    let detail: Vec<String> = points
        .iter()
        .map(|p| {
            format!(
                "({}, {}): |p-p| {:.4}, |S*-S|/|S| {:.4}, RMSE_z {:.3}",
                p.d, p.n, p.mean_abs_p, p.int_corrected_rel, p.rmse_z
            )
        })
        .collect();
    report.line(
        "5",
        p_ok && s_ok,
        format!("{} reps each; {}", points[0].replications, detail.join("; ")),
    );
}

fn criterion_6(report: &mut Report, cfg: &RunConfig) {
    let (panel, truth) = simulate_world(&cfg.sim, 0).expect("simulation");
    let f = fit(&panel, cfg.fit_link(), cfg.sim.r_g, &cfg.sfm.fit_options()).expect("fit");
    let rate = coverage_rate(&f, &panel, &truth.p_path).expect("variance");
    report.line(
        "6",
        (COVERAGE_BAND.0..=COVERAGE_BAND.1).contains(&rate),
        format!(
            "95% interval coverage {rate:.4} over {} cells (band [{}, {}])",
            truth.p_path.len(),
            COVERAGE_BAND.0,
            COVERAGE_BAND.1
        ),
    );
}

fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() / scale
}

fn set_diff(a: &VolSet, b: &VolSet) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..a.spot_sys.len() {
        worst = worst
            .max(max_rel_diff(&a.spot_sys[k], &b.spot_sys[k]))
            .max(max_rel_diff(&a.spot_idio_raw[k], &b.spot_idio_raw[k]))
            .max(max_rel_diff(&a.spot_idio_thr[k], &b.spot_idio_thr[k]));
    }
    for (x, y) in [
        (&a.int_sys, &b.int_sys),
        (&a.int_idio_raw, &b.int_idio_raw),
        (&a.int_idio_thr, &b.int_idio_thr),
        (&a.total_int, &b.total_int),
        (&a.precision_spot, &b.precision_spot),
    ] {
        worst = worst.max(max_rel_diff(x, y));
    }
    worst
}

fn criterion_7(report: &mut Report, cfg: &RunConfig) {
    let (panel, _) = simulate_world(&cfg.sim, 3).expect("simulation");
    let y = panel.y_obs.as_ref().expect("prices");
    let zeros = DMatrix::zeros(y.nrows(), y.ncols());
    let est = estimate(y, panel.delta, &cfg.vol, Some(&zeros)).expect("estimate");
    let diff = set_diff(&est.raw, est.corrected.as_ref().expect("corrected"));
    report.line(
        "7",
        diff <= IDENTITY_TOL,
        format!("max relative difference corrected vs uncorrected at p = 0: {diff:.1e} (<= {IDENTITY_TOL})"),
    );
}

fn criterion_8(report: &mut Report, cfg: &RunConfig) {
    let reps = portfolio_experiment(cfg).expect("portfolio experiment");
    let mut worst_rise = 0.0f64;
    let mut worst_tag = "";
    let mut wins = 0usize;
    let (mut mean_corr, mut mean_unc, mut mean_eq) = (0.0, 0.0, 0.0);
    for rep in &reps {
        for tag in stalevol::replicate::PORTFOLIO_TAGS {
            let objs: Vec<f64> = rep
                .points
                .iter()
                .filter(|p| p.estimator == tag)
                .map(|p| p.objective)
                .collect();
            for w in objs.windows(2) {
                let rise = (w[1] - w[0]) / w[0];
                if rise > worst_rise {
                    worst_rise = rise;
                    worst_tag = tag;
                }
            }
        }
        let risk = |tag: &str| {
            let v: Vec<f64> = rep
                .points
                .iter()
                .filter(|p| p.estimator == tag && p.c >= PORTFOLIO_C_MIN)
                .map(|p| p.oos_risk)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (c, u) = (risk("corrected_iv"), risk("uncorrected_iv"));
        if c <= u {
            wins += 1;
        }
        mean_corr += c / reps.len() as f64;
        mean_unc += u / reps.len() as f64;
        mean_eq += rep.equal_weight_risk / reps.len() as f64;
    }
    let rate = wins as f64 / reps.len() as f64;
    let monotone = worst_rise <= OBJECTIVE_SLACK;
    report.line(
        "8",
        monotone && rate >= PORTFOLIO_WIN_RATE,
        format!(
            "objective non-increasing in c: {monotone} (worst relative rise {worst_rise:.1e} {worst_tag}, slack {OBJECTIVE_SLACK}); corrected IV risk <= uncorrected IV (mean over c >= {PORTFOLIO_C_MIN}) in {wins}/{} reps = {rate:.2} (>= {PORTFOLIO_WIN_RATE}); mean risk corrected {mean_corr:.4}, uncorrected {mean_unc:.4}, equal weight {mean_eq:.4}",
            reps.len()
        ),
    );
}

fn criterion_9(report: &mut Report) {
    let mut bad = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            bad.push(name.to_string());
        }
    };
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;
    check("logit(0)", link_eval(LinkKind::Logit, 0.0).unwrap() == 0.5);
    check("probit(0)", link_eval(LinkKind::Probit, 0.0).unwrap() == 0.5);
    check(
        "logit(ln 3)",
        close(link_eval(LinkKind::Logit, 3f64.ln()).unwrap(), 0.75, 1e-15),
    );
    check("logit'(0)", link_deriv(LinkKind::Logit, 0.0, 1).unwrap() == 0.25);
    check(
        "probit'(0)",
        close(
            link_deriv(LinkKind::Probit, 0.0, 1).unwrap(),
            0.398_942_280_401_432_7,
            1e-15,
        ),
    );
    check("logit''(0)", link_deriv(LinkKind::Logit, 0.0, 2).unwrap() == 0.0);
    check(
        "logit^-1(0.75)",
        close(link_inverse(LinkKind::Logit, 0.75).unwrap(), 3f64.ln(), 1e-15),
    );
    check("order 4 rejected", link_deriv(LinkKind::Logit, 0.0, 4).is_err());

    let roundtrip = (0..1000)
        .map(|k| 0.01 + 0.94 * k as f64 / 999.0)
        .flat_map(|p| {
            [LinkKind::Logit, LinkKind::Probit]
                .map(|kind| (link_eval(kind, link_inverse(kind, p).unwrap()).unwrap() - p).abs() / p)
        })
        .fold(0.0, f64::max);
    check("link roundtrip", roundtrip < 1e-12);

    let two = Panel {
        b: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        x: vec![DMatrix::zeros(2, 1)],
        y_obs: None,
        y_eff: None,
        delta: 1.0,
    };
    let ll = log_likelihood(
        &DMatrix::zeros(1, 1),
        &DMatrix::from_element(1, 1, 1.0),
        &DMatrix::from_row_slice(2, 1, &[0.5, 0.5]),
        &two,
        LinkKind::Logit,
    )
    .unwrap();
    let expect = LinkKind::Logit.cdf(0.5).ln() + (1.0 - LinkKind::Logit.cdf(1.0)).ln();
    check(
        "two-cell likelihood",
        close(ll, expect, 1e-12) && close(ll, -1.78734, 1e-5),
    );

    check("phi(0.5, 0.5)", close(stale_factor(0.5, 0.5), 1.0 / 3.0, 1e-15));
    let raw = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 1.0]);
    let phi = DMatrix::from_element(2, 2, stale_factor(0.5, 0.5));
    let (corr, _) = staleness_correction(&raw, &phi).unwrap();
    check(
        "correction 0.10 -> 0.30",
        close(corr[(0, 1)], 0.3, 1e-12) && corr[(0, 0)] == 1.0,
    );
    let raw = DMatrix::from_row_slice(2, 2, &[1.0, 0.052_173_9, 0.052_173_9, 1.0]);
    let phi = DMatrix::from_element(2, 2, stale_factor(0.2, 0.4));
    check(
        "correction 0.0521739 -> 0.10",
        close(staleness_correction(&raw, &phi).unwrap().0[(0, 1)], 0.1, 1e-6),
    );

    let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]);
    let thr = poet_threshold(&m, &DMatrix::from_element(2, 2, 0.1), Shrink::Soft).unwrap();
    check("soft -0.30 -> -0.20", close(thr[(0, 1)], -0.2, 1e-15));
    check("soft 0.05 -> 0", Shrink::Soft.apply(0.05, 0.1) == 0.0);
    check(
        "zero threshold identity",
        poet_threshold(&m, &DMatrix::zeros(2, 2), Shrink::Soft).unwrap() == m,
    );

    let cfg = PortfolioConfig::default();
    let w = min_variance(&DMatrix::identity(3, 3), 2.0, &cfg).unwrap();
    check("identity weights", w.weights.iter().all(|v| close(*v, 1.0 / 3.0, 1e-9)));
    let w = min_variance(
        &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0])),
        3.0,
        &cfg,
    )
    .unwrap();
    check(
        "diag(1,4)",
        close(w.weights[0], 0.8, 1e-9) && close(w.objective, 0.8, 1e-9),
    );
    check(
        "c < 1 rejected",
        min_variance(&DMatrix::identity(2, 2), 0.5, &cfg).is_err(),
    );
    let flat = DMatrix::from_element(10, 3, 0.01);
    check(
        "constant returns risk",
        oos_evaluate(&[0.2, 0.3, 0.5], &flat, 252.0).unwrap() == 0.0,
    );

    let d = 100.0;
    let sel = select_r_g_from_eigenvalues(&[100.0 * d, 50.0 * d, 2.0, 1.0, 0.5, 0.2, 0.1, 0.0], 8, d.sqrt(), 0.2);
    check("eigenvalue ratio (100d, 50d, 2, 1)", sel.r_g == 2);

    let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
    let b = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
    check(
        "stale recursion",
        apply_staleness(&y, &b).unwrap().as_slice() == [1.0, 1.0, 3.0],
    );

    report.line(
        "9",
        bad.is_empty(),
        if bad.is_empty() {
            "reference examples recomputed".into()
        } else {
            format!("mismatches: {}", bad.join(", "))
        },
    );
}

fn main() {
    let cfg = RunConfig::default();
    let mut report = Report { failures: Vec::new() };
    let start = Instant::now();
    with_pool(cfg.replicate.jobs, || {
        let reps = criterion_1_4(&mut report, &cfg);
        criterion_2(&mut report);
        criterion_3(&mut report, &reps);
        criterion_4(&mut report, &reps);
        criterion_5(&mut report, &cfg);
        criterion_6(&mut report, &cfg);
        criterion_7(&mut report, &cfg);
        criterion_8(&mut report, &cfg);
        criterion_9(&mut report);
    })
    .expect("worker pool");
    println!(
        "acceptance: {}/9 criteria pass in {:.0}s{}",
        9 - report.failures.len(),
        start.elapsed().as_secs_f64(),
        if report.failures.is_empty() {
            String::new()
        } else {
            format!(" (failing: {})", report.failures.join(", "))
        }
    );
    let strict = std::env::var("STALEVOL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !report.failures.is_empty() {
        std::process::exit(1);
    }
}
