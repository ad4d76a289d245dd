//! Iterative calibration: curve extraction, loading computation and
//! marginalised maximum likelihood over the factor parameters, followed by
//! MAP extraction of the daily factor increments.
//!
//! Observation model for one day with `m` futures and `n` factors:
//! `y = M sqrt(Ω) sqrt(δt) U + ε`, `U ~ N(μ, I)`, `ε ~ N(0, Σ)`, where
//! `y_i` is the relative change of future `i` to the next day.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{fit_with_weights, price_with_gradient, CurveFitConfig, FitTarget, PricingWeights, SplineBasis, VarianceCurve};
use crate::error::{invalid, io_err, Error, Result};
use crate::market_data::{ObservationSet, SpotSeries};
use crate::model::ModelParams;
use crate::optimize::{nelder_mead, NmOptions};
use crate::{DT, VIX_WINDOW};

pub const MAX_FACTORS: usize = 3;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One day's terms of the variation likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct DayWorkspace {
    pub date: NaiveDate,
    /// Loadings `½ (𝕂^{T_i,α} / 𝒱^{T_i})^2`, rows = futures, columns = factors.
    pub loadings: DMatrix<f64>,
    /// Per-row noise std of `y` (per day).
    pub noise: Vec<f64>,
    /// Observed relative variations `δ𝒱/𝒱`.
    pub y: Vec<f64>,
}

impl DayWorkspace {
    pub fn new(date: NaiveDate, loadings: DMatrix<f64>, noise: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let m = loadings.nrows();
        if noise.len() != m || y.len() != m || loadings.ncols() == 0 || loadings.ncols() > MAX_FACTORS {
            return Err(invalid("workspace dimensions are inconsistent"));
        }
        if noise.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("noise std must be positive"));
        }
        if loadings.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("loadings must be positive"));
        }
        Ok(Self { date, loadings, noise, y })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Sufficient statistics `G = MᵀΣ⁻¹M`, `h = MᵀΣ⁻¹y`, `c = yᵀΣ⁻¹y`, `log|Σ|`.
    pub fn stats(&self) -> DayStats {
        let n = self.loadings.ncols();
        let mut s = DayStats { n, m: self.n_obs(), ..DayStats::default() };
        for i in 0..self.n_obs() {
            let w = 1.0 / (self.noise[i] * self.noise[i]);
            s.logdet_sigma += 2.0 * self.noise[i].ln();
            s.c += w * self.y[i] * self.y[i];
            for a in 0..n {
                s.h[a] += w * self.loadings[(i, a)] * self.y[i];
                for b in 0..n {
                    s.g[a][b] += w * self.loadings[(i, a)] * self.loadings[(i, b)];
                }
            }
        }
        s
    }
}

type Mat = [[f64; MAX_FACTORS]; MAX_FACTORS];
type Vec3 = [f64; MAX_FACTORS];

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DayStats {
    pub n: usize,
    pub m: usize,
    pub g: Mat,
    pub h: Vec3,
    pub c: f64,
    pub logdet_sigma: f64,
}

/// Exact marginal log-likelihood of one day's variations, the factor draw
/// integrated out against its Gaussian prior.
pub fn day_loglik(ws: &DayWorkspace, params: &ModelParams) -> Result<f64> {
    let n = params.n();
    if ws.loadings.ncols() != n {
        return Err(invalid(format!("workspace has {} factors, params {}", ws.loadings.ncols(), n)));
    }
    let m = ws.n_obs();
    let b = &ws.loadings * params.sqrt_omega() * DT.sqrt();
    let sinv = DVector::from_iterator(m, ws.noise.iter().map(|s| 1.0 / (s * s)));
    let y = DVector::from_column_slice(&ws.y);
    let sb = DMatrix::from_fn(m, n, |i, j| sinv[i] * b[(i, j)]);
    let a = DMatrix::identity(n, n) + b.transpose() * &sb;
    let mu = DVector::from_column_slice(&params.mu);
    let j = &mu + sb.transpose() * &y;
    let chol = a.cholesky().ok_or_else(|| Error::Numerical("posterior precision not positive definite".into()))?;
    let logdet_a = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad_j = j.dot(&chol.solve(&j));
    let logdet_sigma: f64 = ws.noise.iter().map(|s| 2.0 * s.ln()).sum();
    let yy: f64 = y.iter().zip(sinv.iter()).map(|(v, w)| v * v * w).sum();
    Ok(-0.5 * (m as f64 * LN_2PI + logdet_sigma + logdet_a + yy + mu.dot(&mu) - quad_j))
}

/// Posterior mode of `U` for one day: `A⁻¹ J`.
pub fn day_posterior_mean(ws: &DayWorkspace, params: &ModelParams) -> Result<Vec<f64>> {
    let n = params.n();
    let s = ws.stats();
    let (a, b) = posterior_terms(&s, &sqrt_omega_arr(params));
    let l = chol(&a, n).ok_or_else(|| Error::Numerical("posterior precision not positive definite".into()))?;
    let mut j = [0.0; MAX_FACTORS];
    for i in 0..n {
        j[i] = params.mu[i] + b[i];
    }
    Ok(chol_solve(&l, &j, n)[..n].to_vec())
}

fn sqrt_omega_arr(p: &ModelParams) -> Mat {
    let mut s = [[0.0; MAX_FACTORS]; MAX_FACTORS];
    let tri = p.tri();
    for i in 0..p.n() {
        for j in 0..=i {
            s[i][j] = p.theta[i] * tri[i][j];
        }
    }
    s
}

/// `A = I + δt SᵀGS`, `b = sqrt(δt) Sᵀh`.
fn posterior_terms(st: &DayStats, s: &Mat) -> (Mat, Vec3) {
    let n = st.n;
    let mut gs = [[0.0; MAX_FACTORS]; MAX_FACTORS];
    for i in 0..n {
        for j in 0..n {
            gs[i][j] = (0..n).map(|k| st.g[i][k] * s[k][j]).sum();
        }
    }
    let mut a = [[0.0; MAX_FACTORS]; MAX_FACTORS];
    let mut b = [0.0; MAX_FACTORS];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = DT * (0..n).map(|k| s[k][i] * gs[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
        }
        b[i] = DT.sqrt() * (0..n).map(|k| s[k][i] * st.h[k]).sum::<f64>();
    }
    (a, b)
}

fn chol(a: &Mat, n: usize) -> Option<Mat> {
    let mut l = [[0.0; MAX_FACTORS]; MAX_FACTORS];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn chol_solve(l: &Mat, b: &Vec3, n: usize) -> Vec3 {
    let mut z = [0.0; MAX_FACTORS];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; MAX_FACTORS];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Total log-likelihood with `μ` replaced by its closed-form maximiser.
/// Returns the value and the maximising `μ`.
pub fn profile_loglik(stats: &[DayStats], params: &ModelParams) -> Option<(f64, Vec<f64>)> {
    let n = params.n();
    let s = sqrt_omega_arr(params);
    let mut q = [[0.0; MAX_FACTORS]; MAX_FACTORS];
    let mut r = [0.0; MAX_FACTORS];
    let mut ll = 0.0;
    for st in stats {
        ll -= 0.5 * (st.m as f64 * LN_2PI + st.logdet_sigma + st.c);
        if st.m == 0 {
            continue;
        }
        let (a, b) = posterior_terms(st, &s);
        let l = chol(&a, n)?;
        let ainv_b = chol_solve(&l, &b, n);
        let logdet_a: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
        ll -= 0.5 * (logdet_a - (0..n).map(|i| b[i] * ainv_b[i]).sum::<f64>());
        for j in 0..n {
            let mut e = [0.0; MAX_FACTORS];
            e[j] = 1.0;
            let col = chol_solve(&l, &e, n);
            for i in 0..n {
                q[i][j] += e[i] - col[i];
            }
            r[j] += ainv_b[j];
        }
    }
    for (i, row) in q.iter_mut().enumerate().take(n) {
        row[i] += 1e-12;
    }
    let lq = chol(&q, n)?;
    let mu = chol_solve(&lq, &r, n);
    ll += 0.5 * (0..n).map(|i| mu[i] * r[i]).sum::<f64>();
    Some((ll, mu[..n].to_vec()))
}

/// Total log-likelihood at fixed `μ`.
pub fn total_loglik(stats: &[DayStats], params: &ModelParams) -> Option<f64> {
    let n = params.n();
    let s = sqrt_omega_arr(params);
    let mut ll = 0.0;
    for st in stats {
        let (a, b) = posterior_terms(st, &s);
        let l = chol(&a, n)?;
        let mut j = [0.0; MAX_FACTORS];
        for i in 0..n {
            j[i] = params.mu[i] + b[i];
        }
        let x = chol_solve(&l, &j, n);
        let logdet_a: f64 = (0..n).map(|i| 2.0 * l[i][i].ln()).sum();
        let mm: f64 = params.mu.iter().map(|v| v * v).sum();
        let jj: f64 = (0..n).map(|i| j[i] * x[i]).sum();
        ll -= 0.5 * (st.m as f64 * LN_2PI + st.logdet_sigma + logdet_a + st.c + mm - jj);
    }
    Some(ll)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Candidate decay speeds per factor, fast factor first.
    pub k_grids: Vec<Vec<f64>>,
    /// Relative log-likelihood improvement that ends the outer loop.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub curve: CurveFitConfig,
    /// Relative error assigned to the VIX index in curve fits.
    #[serde(default = "default_vix_sigma")]
    pub vix_rel_sigma: f64,
    #[serde(default = "default_min_days")]
    pub min_days: usize,
    #[serde(default = "default_nm_evals")]
    pub nm_max_evals: usize,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_max_outer() -> usize {
    10
}
fn default_restarts() -> usize {
    5
}
fn default_vix_sigma() -> f64 {
    0.05
}
fn default_min_days() -> usize {
    100
}
fn default_nm_evals() -> usize {
    2000
}

fn range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e6).round() / 1e6).collect()
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self::with_grids(vec![range(5.0, 16.0, 1.0), range(0.3, 1.6, 0.1)])
    }
}

impl CalibrationConfig {
    pub fn with_grids(k_grids: Vec<Vec<f64>>) -> Self {
        Self {
            k_grids,
            tol: default_tol(),
            max_outer: default_max_outer(),
            restarts: default_restarts(),
            seed: 0,
            curve: CurveFitConfig::default(),
            vix_rel_sigma: default_vix_sigma(),
            min_days: default_min_days(),
            nm_max_evals: default_nm_evals(),
        }
    }

    pub fn one_factor(grid: Vec<f64>) -> Self {
        Self::with_grids(vec![grid])
    }

    pub fn three_factor() -> Self {
        Self::with_grids(vec![range(20.0, 40.0, 10.0), range(5.0, 16.0, 1.0), range(0.3, 1.6, 0.1)])
    }

    pub fn n_factors(&self) -> usize {
        self.k_grids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_factors();
        if n == 0 || n > MAX_FACTORS {
            return Err(invalid(format!("factor count must be 1..={MAX_FACTORS}, got {n}")));
        }
        if self.k_grids.iter().any(|g| g.is_empty() || g.iter().any(|k| !(*k > 0.0))) {
            return Err(invalid("k grids must be non-empty and positive"));
        }
        if !(self.tol > 0.0) || self.max_outer == 0 || !(self.vix_rel_sigma > 0.0) {
            return Err(invalid("tol, max_outer and vix_rel_sigma must be positive"));
        }
        Ok(())
    }

    /// Grid points with strictly decreasing speeds.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = vec![vec![]];
        for g in &self.k_grids {
            pts = pts
                .into_iter()
                .flat_map(|p| {
                    g.iter()
                        .filter(|&&k| p.last().is_none_or(|&prev| k < prev))
                        .map(|&k| {
                            let mut q = p.clone();
                            q.push(k);
                            q
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        pts
    }
}

/// Parameter-independent per-day data.
#[derive(Debug, Clone)]
struct DayInput {
    date: NaiveDate,
    targets: Vec<FitTarget>,
    /// For each variation row: index into `targets` and the relative change.
    rows: Vec<(usize, f64, f64)>,
}

fn prepare(obs: &ObservationSet, cfg: &CalibrationConfig) -> Result<Vec<DayInput>> {
    let sd = DT.sqrt();
    let mut out = Vec::with_capacity(obs.len());
    for (d, day) in obs.days.iter().enumerate() {
        let mut targets = Vec::new();
        if let Some(v) = day.vix_cash {
            targets.push(FitTarget { t1: 0.0, t2: VIX_WINDOW, value: v, rel_sigma: cfg.vix_rel_sigma });
        }
        let mut rows = Vec::new();
        let next = obs.days.get(d + 1);
        for q in &day.futures {
            if !(q.tau > 0.0) || !(q.price > 0.0) {
                continue;
            }
            let ti = targets.len();
            targets.push(FitTarget { t1: q.tau, t2: q.tau + VIX_WINDOW, value: q.price, rel_sigma: q.sigma * sd });
            if let Some(nq) = next.and_then(|n| n.quote(q.expiry)) {
                let noise = ((q.sigma * q.sigma + nq.sigma * nq.sigma) * DT).sqrt();
                rows.push((ti, nq.price / q.price - 1.0, noise));
            }
        }
        if targets.len() < 2 {
            return Err(Error::Data(format!("{}: fewer than two quotes for the curve fit", day.date)));
        }
        out.push(DayInput { date: day.date, targets, rows });
    }
    Ok(out)
}

/// Per-day pricing functionals on the standard basis for speeds `k`.
fn day_weights(basis: &SplineBasis, inputs: &[DayInput], k: &[f64]) -> Vec<Vec<PricingWeights>> {
    inputs.iter().map(|d| d.targets.iter().map(|t| PricingWeights::new(basis, t.t1, t.t2, k)).collect()).collect()
}

fn workspace_from_curve(
    input: &DayInput,
    weights: &[PricingWeights],
    q: &[f64],
    params: &ModelParams,
) -> Result<DayWorkspace> {
    let n = params.n();
    let m = input.rows.len();
    let mut loadings = DMatrix::zeros(m, n);
    let mut noise = Vec::with_capacity(m);
    let mut y = Vec::with_capacity(m);
    for (r, &(ti, dy, s)) in input.rows.iter().enumerate() {
        let w = &weights[ti];
        let v = price_with_gradient(w, q, Some(params)).0;
        let dt = w.t2 - w.t1;
        for a in 0..n {
            let kk2 = (-params.k[a] * w.t1).exp() * w.kernel[a].iter().zip(q).map(|(x, y)| x * y).sum::<f64>() / dt;
            loadings[(r, a)] = 0.5 * kk2 / (v * v);
        }
        noise.push(s);
        y.push(dy);
    }
    DayWorkspace::new(input.date, loadings, noise, y)
}

/// Loadings and variations for every day given calibrated curves and parameters.
pub fn build_workspaces(obs: &ObservationSet, curves: &[VarianceCurve], params: &ModelParams) -> Result<Vec<DayWorkspace>> {
    if curves.len() != obs.len() {
        return Err(invalid("one curve per observation day is required"));
    }
    let cfg = CalibrationConfig::with_grids(params.k.iter().map(|k| vec![*k]).collect());
    let inputs = prepare(obs, &cfg)?;
    inputs
        .iter()
        .zip(curves)
        .map(|(inp, c)| {
            let w: Vec<PricingWeights> =
                inp.targets.iter().map(|t| PricingWeights::new(c.basis(), t.t1, t.t2, &params.k)).collect();
            workspace_from_curve(inp, &w, c.weights(), params)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: Vec<f64>,
    pub theta: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub loglik: f64,
    pub outer_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ModelParams,
    pub curves: Vec<VarianceCurve>,
    pub loglik: f64,
    pub grid: Vec<GridPoint>,
    pub best: usize,
    /// The best fast speed is not on the edge of its grid.
    pub interior: bool,
}

fn param_vector(p: &ModelParams) -> Vec<f64> {
    let n = p.n();
    let mut x: Vec<f64> = p.theta.iter().map(|t| t.max(1e-4).ln()).collect();
    for a in 0..n {
        for b in a + 1..n {
            x.push(p.rho[a][b].clamp(-0.999, 0.999).atanh());
        }
    }
    x
}

fn params_from_vector(k: &[f64], x: &[f64]) -> Result<ModelParams> {
    let n = k.len();
    let theta: Vec<f64> = x[..n].iter().map(|v| v.exp()).collect();
    let mut rho = vec![vec![1.0; n]; n];
    let mut i = n;
    for a in 0..n {
        for b in a + 1..n {
            let r = x[i].tanh();
            rho[a][b] = r;
            rho[b][a] = r;
            i += 1;
        }
    }
    ModelParams::new(k.to_vec(), theta, rho, vec![0.0; n])
}

/// Maximum likelihood over `(θ, ρ)` with `μ` profiled out, from a warm start
/// plus random restarts.
pub fn maximize_likelihood(
    stats: &[DayStats],
    k: &[f64],
    start: &ModelParams,
    restarts: usize,
    seed: u64,
    max_evals: usize,
) -> Result<(ModelParams, f64)> {
    let objective = |x: &[f64]| -> f64 {
        if x.iter().any(|v| v.abs() > 12.0) {
            return f64::INFINITY;
        }
        match params_from_vector(k, x).ok().and_then(|p| profile_loglik(stats, &p)) {
            Some((ll, _)) => -ll,
            None => f64::INFINITY,
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = param_vector(&start.with_mu(vec![0.0; start.n()]));
    let dim = x0.len();
    let opts = NmOptions { max_evals, ftol: 1e-9, xtol: 1e-7 };
    let mut starts = vec![x0];
    for _ in 0..restarts {
        let mut x: Vec<f64> = (0..k.len()).map(|_| rng.random_range(0.3f64..3.0).ln()).collect();
        while x.len() < dim {
            x.push(rng.random_range(-1.0..1.5));
        }
        starts.push(x);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts {
        let mut r = nelder_mead(objective, &s, &vec![0.3; dim], &opts);
        // a restart from the optimum guards against simplex collapse
        r = nelder_mead(objective, &r.x, &vec![0.05; dim], &opts);
        if best.as_ref().is_none_or(|(_, f)| r.fx < *f) {
            best = Some((r.x, r.fx));
        }
    }
    let (x, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(Error::Numerical("likelihood is not finite at any start".into()));
    }
    let p = params_from_vector(k, &x)?;
    let (ll, mu) = profile_loglik(stats, &p).ok_or_else(|| Error::Numerical("likelihood evaluation failed".into()))?;
    Ok((p.with_mu(mu), ll))
}

struct PointOutcome {
    point: GridPoint,
    params: ModelParams,
    coeffs: Vec<Vec<f64>>,
}

fn fit_all_curves(
    basis: &SplineBasis,
    inputs: &[DayInput],
    weights: &[Vec<PricingWeights>],
    params: Option<&ModelParams>,
    cfg: &CurveFitConfig,
    init: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    inputs
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(d, (inp, w))| {
            let start = init.get(d).map(|v| v.as_slice());
            fit_with_weights(basis, &inp.targets, w, params, cfg, start)
                .map(|f| f.curve.log_coeffs)
                .map_err(|e| Error::Convergence(format!("{}: {e}", inp.date)))
        })
        .collect()
}

fn evaluate_point(
    basis: &SplineBasis,
    inputs: &[DayInput],
    k: &[f64],
    start: &ModelParams,
    init_coeffs: &[Vec<f64>],
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<PointOutcome> {
    let weights = day_weights(basis, inputs, k);
    let mut params = ModelParams::new(k.to_vec(), start.theta.clone(), start.rho.clone(), start.mu.clone())?;
    let mut coeffs = init_coeffs.to_vec();
    let mut prev = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_outer {
        iterations = it + 1;
        coeffs = fit_all_curves(basis, inputs, &weights, Some(&params), &cfg.curve, &coeffs)?;
        let stats: Vec<DayStats> = inputs
            .iter()
            .zip(&weights)
            .zip(&coeffs)
            .map(|((inp, w), c)| {
                let q: Vec<f64> = c.iter().map(|v| v.exp()).collect();
                workspace_from_curve(inp, w, &q, &params).map(|ws| ws.stats())
            })
            .collect::<Result<_>>()?;
        let restarts = if it == 0 { cfg.restarts } else { 0 };
        let (p, l) = maximize_likelihood(&stats, k, &params, restarts, seed.wrapping_add(it as u64), cfg.nm_max_evals)?;
        params = p;
        ll = l;
        if (ll - prev).abs() <= cfg.tol * ll.abs() {
            converged = true;
            break;
        }
        prev = ll;
    }
    let point = GridPoint {
        k: k.to_vec(),
        theta: params.theta.clone(),
        rho: params.rho.clone(),
        mu: params.mu.clone(),
        loglik: ll,
        outer_iterations: iterations,
        converged,
    };
    Ok(PointOutcome { point, params, coeffs })
}

fn default_start(n: usize) -> Result<ModelParams> {
    let theta: Vec<f64> = (0..n).map(|i| 1.5 / (1.0 + i as f64)).collect();
    let mut rho = vec![vec![0.5; n]; n];
    for (i, row) in rho.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let k: Vec<f64> = (0..n).map(|i| 10.0 / 5f64.powi(i as i32)).collect();
    ModelParams::new(k, theta, rho, vec![0.0; n])
}

/// Runs the full calibration over the speed grid.
pub fn calibrate(obs: &ObservationSet, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    if obs.len() < cfg.min_days {
        return Err(invalid(format!("calibration needs at least {} days, got {}", cfg.min_days, obs.len())));
    }
    let inputs = prepare(obs, cfg)?;
    if inputs.iter().all(|d| d.rows.iter().all(|r| r.1 == 0.0)) {
        return Err(Error::Data("all quotes are flat: no variation to calibrate on".into()));
    }
    let n = cfg.n_factors();
    let basis = SplineBasis::standard();
    let none_weights = day_weights(&basis, &inputs, &[]);
    let base_coeffs = fit_all_curves(&basis, &inputs, &none_weights, None, &cfg.curve, &[])?;
    let start = default_start(n)?;

    // rows share the fast speed and are warm-started along the remaining speeds
    let points = cfg.grid_points();
    let mut rows: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match rows.last_mut() {
            Some(r) if r[0].1[0] == p[0] => r.push((i, p.clone())),
            _ => rows.push(vec![(i, p.clone())]),
        }
    }
    let results: Vec<Vec<(usize, PointOutcome)>> = rows
        .par_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(row.len());
            let mut warm = start.clone();
            let mut coeffs = base_coeffs.clone();
            for (i, k) in row {
                let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(*i as u64);
                let o = evaluate_point(&basis, &inputs, k, &warm, &coeffs, cfg, seed)?;
                warm = o.params.clone();
                coeffs = o.coeffs.clone();
                out.push((*i, o));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut outcomes: Vec<(usize, PointOutcome)> = results.into_iter().flatten().collect();
    outcomes.sort_by_key(|(i, _)| *i);
    let best_pos = outcomes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.point.loglik.total_cmp(&b.1 .1.point.loglik))
        .map(|(p, _)| p)
        .ok_or_else(|| invalid("empty calibration grid"))?;
    let grid: Vec<GridPoint> = outcomes.iter().map(|(_, o)| o.point.clone()).collect();
    let best = &outcomes[best_pos].1;
    let fast = &cfg.k_grids[0];
    let kf = best.point.k[0];
    let interior = fast.len() > 2 && kf > fast.iter().cloned().fold(f64::INFINITY, f64::min) && kf < fast.iter().cloned().fold(0.0, f64::max);
    if !best.point.converged {
        return Err(Error::Convergence(format!(
            "outer loop did not converge in {} iterations; best iterate k={:?} theta={:?} loglik={}",
            cfg.max_outer, best.point.k, best.point.theta, best.point.loglik
        )));
    }
    let curves = best
        .coeffs
        .iter()
        .zip(&obs.days)
        .map(|(c, day)| {
            let tau_max = day.futures.iter().map(|q| q.tau + VIX_WINDOW).fold(basis.last_knot(), f64::max);
            VarianceCurve::from_log_coeffs(basis.clone(), c.clone(), tau_max, Some(day.date))
        })
        .collect();
    Ok(CalibrationResult {
        params: best.params.clone(),
        curves,
        loglik: best.point.loglik,
        grid,
        best: best_pos,
        interior,
    })
}

/// Calibration output as written to disk, with its wall-clock time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub seconds: f64,
    pub result: CalibrationResult,
}

/// Highest log-likelihood per fast speed, maximised over the other speeds.
pub fn fast_profile(grid: &[GridPoint]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for p in grid {
        match out.iter_mut().find(|(k, _)| *k == p.k[0]) {
            Some(e) => e.1 = e.1.max(p.loglik),
            None => out.push((p.k[0], p.loglik)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Per-grid-point diagnostics table.
pub fn write_grid_csv(path: &Path, grid: &[GridPoint]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let n = grid.first().map_or(0, |g| g.k.len());
    let mut header: Vec<String> = Vec::new();
    for a in 0..n {
        header.push(format!("k{a}"));
    }
    for a in 0..n {
        header.push(format!("theta{a}"));
    }
    for a in 0..n {
        for b in a + 1..n {
            header.push(format!("rho{a}{b}"));
        }
    }
    for a in 0..n {
        header.push(format!("mu{a}"));
    }
    header.extend(["loglik".into(), "outer_iterations".into(), "converged".into()]);
    writeln!(f, "{}", header.join(",")).map_err(|e| io_err(path, e))?;
    for g in grid {
        let mut cols: Vec<String> = g.k.iter().chain(&g.theta).map(|v| v.to_string()).collect();
        for a in 0..n {
            for b in a + 1..n {
                cols.push(g.rho[a][b].to_string());
            }
        }
        cols.extend(g.mu.iter().map(|v| v.to_string()));
        cols.extend([g.loglik.to_string(), g.outer_iterations.to_string(), g.converged.to_string()]);
        writeln!(f, "{}", cols.join(",")).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Extracted daily factors. `dw[t][α]` and `dz[t]` are per-day increments;
/// barred series are centred and scaled to unit variance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSeries {
    pub dates: Vec<NaiveDate>,
    pub dw: Vec<Vec<f64>>,
    pub dz: Vec<f64>,
    pub xi_spot: Vec<f64>,
    pub dz_bar: Vec<f64>,
    pub dw_bar: Vec<Vec<f64>>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn standardize(x: &[f64]) -> Vec<f64> {
    let (m, s) = mean_std(x);
    let s = if s > 0.0 { s } else { 1.0 };
    x.iter().map(|v| (v - m) / s).collect()
}

impl FactorSeries {
    /// Builds the series and the barred versions from raw increments.
    pub fn from_raw(dates: Vec<NaiveDate>, dw: Vec<Vec<f64>>, dz: Vec<f64>, xi_spot: Vec<f64>) -> Result<Self> {
        let len = dates.len();
        if dw.len() != len || dz.len() != len || xi_spot.len() != len {
            return Err(invalid("factor series lengths differ"));
        }
        if len < 3 {
            return Err(invalid("factor series too short"));
        }
        let n = dw[0].len();
        let dz_bar = standardize(&dz);
        let cols: Vec<Vec<f64>> = (0..n).map(|a| standardize(&dw.iter().map(|r| r[a]).collect::<Vec<_>>())).collect();
        let dw_bar = (0..len).map(|t| cols.iter().map(|c| c[t]).collect()).collect();
        Ok(Self { dates, dw, dz, xi_spot, dz_bar, dw_bar })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_factors(&self) -> usize {
        self.dw.first().map_or(0, |r| r.len())
    }

    pub fn factor(&self, a: usize) -> Vec<f64> {
        self.dw.iter().map(|r| r[a]).collect()
    }

    pub fn factor_bar(&self, a: usize) -> Vec<f64> {
        self.dw_bar.iter().map(|r| r[a]).collect()
    }
}

/// MAP factor increments `δW = sqrt(δt) TrI A⁻¹J` per day, paired with the
/// spot factor `r_t / sqrt(ξ_t^t)`. Days without a next-day variation or a
/// spot return are skipped.
pub fn extract_factors(
    obs: &ObservationSet,
    curves: &[VarianceCurve],
    params: &ModelParams,
    spot: &SpotSeries,
) -> Result<FactorSeries> {
    let ws = build_workspaces(obs, curves, params)?;
    let n = params.n();
    let tri = params.tri();
    let (mut dates, mut dw, mut dz, mut xi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((w, c), day) in ws.iter().zip(curves).zip(&obs.days) {
        if w.n_obs() == 0 {
            continue;
        }
        let Some(r) = spot.return_on(day.date) else { continue };
        let u = day_posterior_mean(w, params)?;
        let d: Vec<f64> = (0..n).map(|a| DT.sqrt() * (0..=a).map(|b| tri[a][b] * u[b]).sum::<f64>()).collect();
        let x0 = c.eval(0.0)?;
        dates.push(day.date);
        dw.push(d);
        dz.push(r / x0.sqrt());
        xi.push(x0);
    }
    FactorSeries::from_raw(dates, dw, dz, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::trapezoid_uniform;

    fn rand_ws(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DayWorkspace {
        let loadings = DMatrix::from_fn(m, n, |_, _| rng.random_range(0.05..0.6));
        let noise = (0..m).map(|_| rng.random_range(0.01..0.08)).collect();
        let y = (0..m).map(|_| rng.random_range(-0.1..0.1)).collect();
        DayWorkspace::new(NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(), loadings, noise, y).unwrap()
    }

    fn joint_density_1d(ws: &DayWorkspace, p: &ModelParams, u: f64) -> f64 {
        let b = p.theta[0] * DT.sqrt();
        let mut lp = -0.5 * (u - p.mu[0]).powi(2) - 0.5 * LN_2PI;
        for i in 0..ws.n_obs() {
            let e = ws.y[i] - ws.loadings[(i, 0)] * b * u;
            lp += -0.5 * (e / ws.noise[i]).powi(2) - ws.noise[i].ln() - 0.5 * LN_2PI;
        }
        lp.exp()
    }

    #[test]
    fn one_dimensional_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let ws = rand_ws(&mut rng, 1, 1);
            let p = ModelParams::new(vec![5.0], vec![rng.random_range(0.3..2.5)], vec![vec![1.0]], vec![rng.random_range(-0.3..0.3)]).unwrap();
            let post = day_posterior_mean(&ws, &p).unwrap()[0];
            let integral = trapezoid_uniform(|u| joint_density_1d(&ws, &p, u), post - 12.0, post + 12.0, 20000);
            let ll = day_loglik(&ws, &p).unwrap();
            assert!((integral.ln() - ll).abs() < 1e-8, "{} {}", integral.ln(), ll);
        }
    }

    #[test]
    fn vanishing_vol_of_vol_is_pure_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ws = rand_ws(&mut rng, 2, 5);
        let p = ModelParams::two_factor([8.0, 1.0], [0.0, 0.0], 0.3, [0.1, -0.2]).unwrap();
        let expected: f64 = (0..5).map(|i| -0.5 * (ws.y[i] / ws.noise[i]).powi(2) - ws.noise[i].ln() - 0.5 * LN_2PI).sum();
        assert!((day_loglik(&ws, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn fast_paths_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::two_factor([9.0, 1.2], [1.7, 0.8], 0.45, [-0.05, 0.02]).unwrap();
        let days: Vec<DayWorkspace> = (0..20).map(|i| rand_ws(&mut rng, 2, 1 + i % 7)).collect();
        let stats: Vec<DayStats> = days.iter().map(|d| d.stats()).collect();
        let dense: f64 = days.iter().map(|d| day_loglik(d, &p).unwrap()).sum();
        assert!((total_loglik(&stats, &p).unwrap() - dense).abs() < 1e-9 * dense.abs());
        let (prof, mu) = profile_loglik(&stats, &p).unwrap();
        assert!(prof >= dense - 1e-9);
        let at_mu: f64 = days.iter().map(|d| day_loglik(d, &p.with_mu(mu.clone())).unwrap()).sum();
        assert!((prof - at_mu).abs() < 1e-8 * at_mu.abs());
        for da in [-1e-3, 1e-3] {
            let shifted = p.with_mu(vec![mu[0] + da, mu[1]]);
            assert!(total_loglik(&stats, &shifted).unwrap() < prof);
        }
    }

    #[test]
    fn noiseless_single_future_inverts_exactly() {
        let p = ModelParams::one_factor(4.0, 1.2);
        let ws = DayWorkspace::new(NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(), DMatrix::from_element(1, 1, 0.4), vec![1e-9], vec![0.02])
            .unwrap();
        let u = day_posterior_mean(&ws, &p).unwrap()[0];
        let dw = DT.sqrt() * u;
        assert!((0.4 * 1.2 * dw - 0.02).abs() < 1e-10);
        let noisy = DayWorkspace { noise: vec![1e6], ..ws };
        let u = day_posterior_mean(&noisy, &p.with_mu(vec![0.3])).unwrap()[0];
        assert!((u - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grid_enforces_ordering() {
        let cfg = CalibrationConfig::with_grids(vec![vec![1.0, 2.0, 3.0], vec![0.5, 1.5, 2.5]]);
        let pts = cfg.grid_points();
        assert!(pts.iter().all(|p| p[0] > p[1]));
        assert_eq!(pts.len(), 6);
        let d = CalibrationConfig::default();
        assert_eq!(d.k_grids[0].len(), 12);
        assert_eq!(d.k_grids[1].len(), 14);
    }

    #[test]
    fn standardized_series() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        let f = FactorSeries::from_raw(vec![d; 4], vec![vec![1.0], vec![2.0], vec![4.0], vec![5.0]], vec![0.1, -0.1, 0.2, 0.0], vec![0.04; 4])
            .unwrap();
        let (m, s) = mean_std(&f.dz_bar);
        assert!(m.abs() < 1e-15 && (s - 1.0).abs() < 1e-12);
        let (m, s) = mean_std(&f.factor_bar(0));
        assert!(m.abs() < 1e-15 && (s - 1.0).abs() < 1e-12);
    }
}
