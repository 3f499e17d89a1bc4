use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::{initialize, InitialValues};
use super::normalize::{cumulate, difference, normalize_factors};
use super::SfmFit;
use crate::error::{Error, Result};
use crate::flags::Flag;
use crate::link::LinkKind;
use crate::sim::Panel;

/// Which block of factor coordinates the second half-sweep updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorUpdate {
    /// Exact Newton solve for each level g_j (separable across j).
    #[default]
    Levels,
    /// Sequential solve for each increment Δg_j on the tail sum over l ≥ j.
    Increments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// ε* of the parameter-change stopping rule.
    pub tol: f64,
    pub max_sweeps: usize,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub factor_update: FactorUpdate,
    /// Window of the initializer's block means; ⌈√n⌉ when absent.
    pub kbar: Option<usize>,
    /// Bound on |z| enforced inside Newton updates.
    pub z_cap: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: 1e-3,
            max_sweeps: 200,
            newton_tol: 1e-8,
            newton_max: 50,
            factor_update: FactorUpdate::Levels,
            kbar: None,
            z_cap: 15.0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::validation("sfm.tol", "must be positive"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::validation("sfm.max_sweeps", "must be at least 1"));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return Err(Error::validation("sfm.newton_tol", "Newton settings must be positive"));
        }
        if let Some(k) = self.kbar {
            if k < 2 {
                return Err(Error::validation("sfm.kbar", "must be at least 2"));
            }
        }
        if !(self.z_cap > 0.0) {
            return Err(Error::validation("sfm.z_cap", "must be positive"));
        }
        Ok(())
    }
}

/// Fit the model with `r_g` staleness factors from the block initializer.
///
/// `r_g = 0` fits the covariate-only model (independent per-asset regressions).
pub fn fit(panel: &Panel, kind: LinkKind, r_g: usize, options: &FitOptions) -> Result<SfmFit> {
    options.validate()?;
    panel.validate()?;
    let kbar = options
        .kbar
        .unwrap_or_else(|| (panel.n() as f64).sqrt().ceil() as usize)
        .max(2);
    let init = initialize(panel, kind, r_g, kbar)?;
    fit_from(panel, kind, init, options)
}

/// One Newton evaluation: value, score, Hessian and the largest |z| touched.
struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    max_abs_z: f64,
}

struct NewtonOutcome {
    theta: DVector<f64>,
    cap_hits: usize,
    last: Eval,
}

/// A smooth concave block objective with a linear index in its parameters.
trait Block {
    fn eval(&self, theta: &DVector<f64>) -> Eval;
    /// Largest t in [0, 1] with max|z(theta + t step)| ≤ bound.
    fn reach(&self, theta: &DVector<f64>, step: &DVector<f64>, bound: f64) -> f64;
}

/// Largest t ≤ `t` keeping z + t v inside [-bound, bound].
#[inline]
fn clip_reach(t: f64, z: f64, v: f64, bound: f64) -> f64 {
    if v > 0.0 {
        t.min((bound - z) / v)
    } else if v < 0.0 {
        t.min((bound + z) / -v)
    } else {
        t
    }
}

/// Damped Newton ascent with step-halving and an |z| bound.
fn newton_ascent<B: Block>(theta0: DVector<f64>, block: &B, z_cap: f64, tol: f64, max_iter: usize) -> NewtonOutcome {
    let cur = block.eval(&theta0);
    newton_from(theta0, cur, block, z_cap, tol, max_iter)
}

/// Newton ascent from an already evaluated starting point.
fn newton_from<B: Block>(
    theta0: DVector<f64>,
    mut cur: Eval,
    block: &B,
    z_cap: f64,
    tol: f64,
    max_iter: usize,
) -> NewtonOutcome {
    let k = theta0.len();
    let mut theta = theta0;
    let bound = z_cap.max(cur.max_abs_z);
    let mut cap_hits = 0;
    if k == 0 {
        return NewtonOutcome {
            theta,
            cap_hits,
            last: cur,
        };
    }
    for _ in 0..max_iter {
        if cur.grad.amax() == 0.0 {
            break;
        }
        let neg_h = -&cur.hess;
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&cur.grad),
            None => {
                let scale = 1e-8 * (1.0 + neg_h.diagonal().amax());
                let mut lambda = scale;
                let mut found = None;
                for _ in 0..40 {
                    if let Some(ch) = (&neg_h + DMatrix::identity(k, k) * lambda).cholesky() {
                        found = Some(ch.solve(&cur.grad));
                        break;
                    }
                    lambda *= 10.0;
                }
                found.unwrap_or_else(|| cur.grad.clone() / (1.0 + cur.grad.norm()))
            }
        };
        if step.norm() < tol {
            break;
        }
        let mut t = block.reach(&theta, &step, bound);
        if t < 1.0 {
            cap_hits += 1;
            t *= 1.0 - 1e-12;
        }
        let mut accepted = None;
        // The slack absorbs summation-order rounding in carried values.
        let floor = cur.value - 1e-13 * cur.value.abs();
        while t * step.norm() >= tol {
            let cand = &theta + &step * t;
            let e = block.eval(&cand);
            if e.value >= floor {
                accepted = Some((cand, e));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, e)) = accepted else { break };
        let moved = (&cand - &theta).norm();
        theta = cand;
        cur = e;
        if moved < tol {
            break;
        }
    }
    NewtonOutcome {
        theta,
        cap_hits,
        last: cur,
    }
}

/// Read-only views of the panel used by the sweeps.
struct Data<'a> {
    kind: LinkKind,
    b: &'a DMatrix<f64>,
    x: &'a [DMatrix<f64>],
    rows: usize,
    d: usize,
}

impl Data<'_> {
    #[inline]
    fn stale(&self, j: usize, i: usize) -> bool {
        self.b[(j, i)] == 1.0
    }
}

/// Objective of the factor shift s applied to rows `from..to` (offsets c fixed).
fn factor_eval(data: &Data, c: &DMatrix<f64>, gamma: &DMatrix<f64>, from: usize, to: usize, s: &DVector<f64>) -> Eval {
    let r = s.len();
    let gs: DVector<f64> = gamma * s;
    let mut grad = DVector::zeros(r);
    let mut hess = DMatrix::zeros(r, r);
    let mut value = 0.0;
    let mut max_abs_z = 0.0f64;
    for i in 0..data.d {
        let (mut l1sum, mut l2sum) = (0.0, 0.0);
        for j in from..to {
            let z = c[(j, i)] + gs[i];
            max_abs_z = max_abs_z.max(z.abs());
            let (lv, l1, l2) = data.kind.cell_loglik(z, data.stale(j, i));
            value += lv;
            l1sum += l1;
            l2sum += l2;
        }
        for p in 0..r {
            let gp = gamma[(i, p)];
            grad[p] += l1sum * gp;
            for q in p..r {
                hess[(p, q)] += l2sum * gp * gamma[(i, q)];
            }
        }
    }
    for p in 0..r {
        for q in 0..p {
            hess[(p, q)] = hess[(q, p)];
        }
    }
    Eval {
        value,
        grad,
        hess,
        max_abs_z,
    }
}

/// Per-asset objective in θ_i = (a_i, γ_i) with the factor levels fixed.
fn asset_eval(data: &Data, i: usize, g: &DMatrix<f64>, theta: &DVector<f64>) -> Eval {
    let r_x = data.x.len();
    let k = theta.len();
    let rows = data.rows;
    let bcol = &data.b.as_slice()[i * rows..(i + 1) * rows];
    let xcols: Vec<&[f64]> = data.x.iter().map(|m| &m.as_slice()[i * rows..(i + 1) * rows]).collect();
    let mut grad = DVector::zeros(k);
    let mut hess = DMatrix::zeros(k, k);
    let mut u = vec![0.0; k];
    let mut value = 0.0;
    let mut max_abs_z = 0.0f64;
    for j in 0..rows {
        for l in 0..r_x {
            u[l] = xcols[l][j];
        }
        for l in r_x..k {
            u[l] = g[(j, l - r_x)];
        }
        let z: f64 = u.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        max_abs_z = max_abs_z.max(z.abs());
        let (lv, l1, l2) = data.kind.cell_loglik(z, bcol[j] == 1.0);
        value += lv;
        for p in 0..k {
            grad[p] += l1 * u[p];
            let w = l2 * u[p];
            for q in p..k {
                hess[(p, q)] += w * u[q];
            }
        }
    }
    for p in 0..k {
        for q in 0..p {
            hess[(p, q)] = hess[(q, p)];
        }
    }
    Eval {
        value,
        grad,
        hess,
        max_abs_z,
    }
}

struct AssetBlock<'a> {
    data: &'a Data<'a>,
    i: usize,
    g: &'a DMatrix<f64>,
}

impl Block for AssetBlock<'_> {
    fn eval(&self, theta: &DVector<f64>) -> Eval {
        asset_eval(self.data, self.i, self.g, theta)
    }

    fn reach(&self, theta: &DVector<f64>, step: &DVector<f64>, bound: f64) -> f64 {
        let r_x = self.data.x.len();
        let mut t: f64 = 1.0;
        for j in 0..self.data.rows {
            let (mut z, mut v) = (0.0, 0.0);
            for p in 0..theta.len() {
                let u = if p < r_x {
                    self.data.x[p][(j, self.i)]
                } else {
                    self.g[(j, p - r_x)]
                };
                z += u * theta[p];
                v += u * step[p];
            }
            t = clip_reach(t, z, v, bound);
        }
        t.max(0.0)
    }
}

struct FactorBlock<'a> {
    data: &'a Data<'a>,
    c: &'a DMatrix<f64>,
    gamma: &'a DMatrix<f64>,
    from: usize,
    to: usize,
}

impl Block for FactorBlock<'_> {
    fn eval(&self, s: &DVector<f64>) -> Eval {
        factor_eval(self.data, self.c, self.gamma, self.from, self.to, s)
    }

    fn reach(&self, s: &DVector<f64>, step: &DVector<f64>, bound: f64) -> f64 {
        let gs = self.gamma * s;
        let gv = self.gamma * step;
        let mut t: f64 = 1.0;
        for i in 0..self.data.d {
            if gv[i] == 0.0 {
                continue;
            }
            let col = &self.c.column(i);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in self.from..self.to {
                lo = lo.min(col[j]);
                hi = hi.max(col[j]);
            }
            t = clip_reach(t, if gv[i] > 0.0 { hi } else { lo } + gs[i], gv[i], bound);
        }
        t.max(0.0)
    }
}

struct State {
    a: DMatrix<f64>,
    gamma: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl State {
    fn index(&self, data: &Data) -> DMatrix<f64> {
        let mut z = &self.g * self.gamma.transpose();
        for (l, xl) in data.x.iter().enumerate() {
            for i in 0..data.d {
                let ail = self.a[(i, l)];
                for j in 0..data.rows {
                    z[(j, i)] += ail * xl[(j, i)];
                }
            }
        }
        z
    }
}

/// Log-likelihood and full score norm (all θ_i and all levels g_j).
fn loglik_and_score(data: &Data, st: &State) -> (f64, f64) {
    let z = st.index(data);
    let r_x = data.x.len();
    let r = st.gamma.ncols();
    let mut value = 0.0;
    let mut l1 = DMatrix::zeros(data.rows, data.d);
    for i in 0..data.d {
        for j in 0..data.rows {
            let (lv, d1, _) = data.kind.cell_loglik(z[(j, i)], data.stale(j, i));
            value += lv;
            l1[(j, i)] = d1;
        }
    }
    let mut sq = 0.0;
    for i in 0..data.d {
        let col = l1.column(i);
        for l in 0..r_x {
            let s: f64 = col.iter().zip(data.x[l].column(i).iter()).map(|(a, b)| a * b).sum();
            sq += s * s;
        }
        for k in 0..r {
            let s: f64 = col.iter().zip(st.g.column(k).iter()).map(|(a, b)| a * b).sum();
            sq += s * s;
        }
    }
    let gscore = &l1 * &st.gamma;
    sq += gscore.norm_squared();
    (value, sq.sqrt())
}

/// Continue the ascent from given starting values.
pub fn fit_from(panel: &Panel, kind: LinkKind, init: InitialValues, options: &FitOptions) -> Result<SfmFit> {
    options.validate()?;
    panel.validate()?;
    let (rows, d) = panel.b.shape();
    let n = rows - 1;
    let r_x = panel.r_x();
    let r_g = init.gamma.ncols();
    if init.a.shape() != (d, r_x) || init.gamma.nrows() != d || init.delta_g.shape() != (rows, r_g) {
        return Err(Error::Shape("initial values do not match the panel".into()));
    }
    let data = Data {
        kind,
        b: &panel.b,
        x: &panel.x,
        rows,
        d,
    };
    let mut flags = init.flags;
    for i in 0..d {
        let s: f64 = panel.b.column(i).sum();
        if s == 0.0 || s == rows as f64 {
            flags.push(Flag::Separation { asset: i });
        }
    }

    let mut st = State {
        a: init.a,
        gamma: init.gamma,
        g: cumulate(&init.delta_g),
    };
    if r_g > 0 {
        renormalize(&mut st)?;
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    let mut grad_norm = f64::INFINITY;
    let mut cap_hits = 0usize;

    for sweep in 0..options.max_sweeps {
        iterations = sweep + 1;
        let a_old = st.a.clone();
        let prod_old = &st.g * st.gamma.transpose();

        // Per-asset block.
        let g_ref = &st.g;
        let thetas: Vec<NewtonOutcome> = (0..d)
            .into_par_iter()
            .map(|i| {
                let theta0 =
                    DVector::from_iterator(r_x + r_g, st.a.row(i).iter().chain(st.gamma.row(i).iter()).copied());
                newton_ascent(
                    theta0,
                    &AssetBlock {
                        data: &data,
                        i,
                        g: g_ref,
                    },
                    options.z_cap,
                    options.newton_tol,
                    options.newton_max,
                )
            })
            .collect();
        for (i, out) in thetas.into_iter().enumerate() {
            cap_hits += out.cap_hits;
            for l in 0..r_x {
                st.a[(i, l)] = out.theta[l];
            }
            for k in 0..r_g {
                st.gamma[(i, k)] = out.theta[r_x + k];
            }
        }

        // Factor block.
        if r_g > 0 {
            match options.factor_update {
                FactorUpdate::Levels => {
                    let c = st.index(&data);
                    let gamma = &st.gamma;
                    let g_now = &st.g;
                    let shifts: Vec<NewtonOutcome> = (0..rows)
                        .into_par_iter()
                        .map(|j| {
                            newton_ascent(
                                DVector::zeros(r_g),
                                &FactorBlock {
                                    data: &data,
                                    c: &c,
                                    gamma,
                                    from: j,
                                    to: j + 1,
                                },
                                options.z_cap,
                                options.newton_tol,
                                options.newton_max,
                            )
                        })
                        .collect();
                    let mut g_new = g_now.clone();
                    for (j, out) in shifts.into_iter().enumerate() {
                        cap_hits += out.cap_hits;
                        for k in 0..r_g {
                            g_new[(j, k)] += out.theta[k];
                        }
                    }
                    st.g = g_new;
                }
                FactorUpdate::Increments => {
                    // Rows l >= j all carry the same accumulated shift, so the tail
                    // objective is evaluated from the index at the start of the phase.
                    let c0 = st.index(&data);
                    let gamma = &st.gamma;
                    let mut acc = DVector::zeros(r_g);
                    let mut carried: Option<Eval> = None;
                    for j in 0..rows {
                        let start = match carried.take() {
                            Some(mut e) => {
                                let row = factor_eval(&data, &c0, gamma, j - 1, j, &acc);
                                e.value -= row.value;
                                e.grad -= row.grad;
                                e.hess -= row.hess;
                                e
                            }
                            None => factor_eval(&data, &c0, gamma, j, rows, &acc),
                        };
                        let out = newton_from(
                            acc.clone(),
                            start,
                            &FactorBlock {
                                data: &data,
                                c: &c0,
                                gamma,
                                from: j,
                                to: rows,
                            },
                            options.z_cap,
                            options.newton_tol,
                            options.newton_max,
                        );
                        cap_hits += out.cap_hits;
                        acc = out.theta;
                        carried = Some(out.last);
                        for k in 0..r_g {
                            st.g[(j, k)] += acc[k];
                        }
                    }
                }
            }
            renormalize(&mut st)?;
        }

        let (value, gnorm) = loglik_and_score(&data, &st);
        trace.push(value);
        grad_norm = gnorm;
        let da = (&st.a - &a_old).norm_squared() / d as f64;
        let dprod = (&st.g * st.gamma.transpose() - prod_old).norm_squared() / (n * d) as f64;
        change = da + dprod;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        flags.push(Flag::SolverStall {
            context: "staleness factor model".into(),
        });
    }
    if cap_hits > 0 {
        flags.push(Flag::IndexCapBinding { updates: cap_hits });
    }

    let delta_g = difference(&st.g);
    let z_hat = st.index(&data);
    let p_hat = z_hat.map(|z| kind.cdf(z));
    let clamped = z_hat
        .iter()
        .zip(panel.b.iter())
        .filter(|(z, b)| kind.cell_loglik_clamped(**z, **b == 1.0).1)
        .count();
    if clamped > 0 {
        flags.push(Flag::IllConditioned { cells: clamped });
    }
    if r_g > 0 {
        let check = normalize_factors(&st.gamma, &delta_g)?;
        flags.extend(check.flags);
    }
    Ok(SfmFit {
        link: kind,
        a_hat: st.a,
        gamma_hat: st.gamma,
        g_hat: st.g,
        delta_g_hat: delta_g,
        p_hat,
        z_hat,
        loglik_trace: trace,
        iterations,
        converged,
        gradient_norm: grad_norm,
        change,
        flags,
    })
}

/// Rotate the current iterate into the normalized gauge; the likelihood is unchanged.
fn renormalize(st: &mut State) -> Result<()> {
    let out = normalize_factors(&st.gamma, &difference(&st.g))?;
    st.gamma = out.gamma;
    st.g = cumulate(&out.delta_g);
    Ok(())
}
