//! Path simulator for spot and forward-variance curve, with streaming
//! estimators.
//!
//! Curve state per factor: `Y_α(t) = Σ e^{-k_α (t-s)} δW_s^α` and compensators
//! `Q_αβ(t)`, so that
//! `log ξ_t^u = log ξ_0^u + Σ θ_α e^{-k_α (u-t)} Y_α - ½ Σ Ω_αβ e^{-(k_α+k_β)(u-t)} Q_αβ`.
//!
//! Without a spot/vol coupling the kernel-integrated increments are drawn
//! exactly from their joint Gaussian law. With a coupling the daily
//! increments `δW = sqrt(δt) (f(δZ̄) + γ U)` enter at the start of each step.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;
use serde::{Deserialize, Serialize};

use crate::calibration::MAX_FACTORS;
use crate::curve::VarianceCurve;
use crate::error::{invalid, io_err, Error, Result};
use crate::kernel::g;
use crate::model::{correlation_cholesky, ModelParams};
use crate::optimize::find_root;
use crate::quad::gl16;
use crate::{DT, VIX_WINDOW};

/// Power-polynomial transform `Z = -c + bX + cX² + dX³` of a standard normal
/// with unit variance and prescribed skewness and excess kurtosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fleishman {
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Fleishman {
    pub fn new(skew: f64, kurt: f64) -> Result<Self> {
        let eqs = |x: &[f64; 3]| -> [f64; 3] {
            let (b, c, d) = (x[0], x[1], x[2]);
            [
                b * b + 6.0 * b * d + 2.0 * c * c + 15.0 * d * d - 1.0,
                2.0 * c * (b * b + 24.0 * b * d + 105.0 * d * d + 2.0) - skew,
                24.0 * (b * d + c * c * (1.0 + b * b + 28.0 * b * d) + d * d * (12.0 + 48.0 * b * d + 141.0 * c * c + 225.0 * d * d))
                    - kurt,
            ]
        };
        let mut x = [1.0, skew / 6.0, kurt / 24.0];
        for _ in 0..200 {
            let f = eqs(&x);
            if f.iter().all(|v| v.abs() < 1e-13) {
                let s = Self { b: x[0], c: x[1], d: x[2] };
                return Ok(s);
            }
            let mut jac = DMatrix::zeros(3, 3);
            for j in 0..3 {
                let mut xp = x;
                let h = 1e-7 * x[j].abs().max(1e-3);
                xp[j] += h;
                let fp = eqs(&xp);
                for i in 0..3 {
                    jac[(i, j)] = (fp[i] - f[i]) / h;
                }
            }
            let step = jac
                .lu()
                .solve(&DVector::from_column_slice(&f))
                .ok_or_else(|| Error::Numerical("singular Fleishman Jacobian".into()))?;
            for i in 0..3 {
                x[i] -= step[i].clamp(-0.5, 0.5);
            }
        }
        Err(invalid(format!("no power-polynomial transform for skew {skew}, excess kurtosis {kurt}")))
    }

    #[inline]
    pub fn transform(&self, x: f64) -> f64 {
        -self.c + x * (self.b + x * (self.c + x * self.d))
    }
}

/// Distribution of the standardised spot innovation `δZ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Innovation {
    Gaussian,
    Skewed { skew: f64, kurt: f64 },
}

impl Innovation {
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            Innovation::Gaussian => (0.0, 0.0),
            Innovation::Skewed { skew, kurt } => (skew, kurt),
        }
    }
}

/// Non-linear spot/vol coupling `δW̄^α = a_α(δZ̄²-1) - b_α δZ̄ + γ_α U^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub u_corr: Vec<Vec<f64>>,
}

impl Coupling {
    /// Coupling whose factors have unit variance and correlation `params.rho`
    /// given innovation moments `(ζ, κ)`. The residual correlation is clamped
    /// to (-1, 1) when the inputs are mutually inconsistent.
    pub fn consistent(params: &ModelParams, a: &[f64], b: &[f64], skew: f64, kurt: f64) -> Result<Self> {
        let n = params.n();
        if a.len() != n || b.len() != n {
            return Err(invalid("coupling size differs from factor count"));
        }
        let gamma: Vec<f64> = (0..n)
            .map(|i| {
                let g2 = 1.0 - a[i] * a[i] * (2.0 + kurt) - b[i] * b[i] + 2.0 * a[i] * b[i] * skew;
                if g2 < 0.0 {
                    Err(invalid(format!("coupling of factor {i} exceeds unit variance")))
                } else {
                    Ok(g2.sqrt())
                }
            })
            .collect::<Result<_>>()?;
        let mut u_corr = vec![vec![1.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let spot = (2.0 + kurt) * a[i] * a[j] + b[i] * b[j] - skew * (a[i] * b[j] + a[j] * b[i]);
                    let gg = gamma[i] * gamma[j];
                    u_corr[i][j] = if gg > 0.0 { ((params.rho[i][j] - spot) / gg).clamp(-0.999, 0.999) } else { 0.0 };
                }
            }
        }
        Ok(Self { a: a.to_vec(), b: b.to_vec(), gamma, u_corr })
    }

    /// `f_α(z)`.
    #[inline]
    pub fn f(&self, alpha: usize, z: f64) -> f64 {
        self.a[alpha] * (z * z - 1.0) - self.b[alpha] * z
    }
}

/// Mean-reverting multiplicative scale on vol-of-vol: `log λ` is an OU
/// process around `log λ_∞`; factor vols are multiplied by `sqrt(λ/λ_∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaDynamics {
    pub lambda0: f64,
    pub lambda_inf: f64,
    pub k: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub paths: usize,
    /// Number of daily steps.
    pub steps: usize,
    pub seed: u64,
    /// Multiplies every θ.
    #[serde(default = "one")]
    pub lambda_scale: f64,
    #[serde(default = "gaussian")]
    pub innovation: Innovation,
    /// Annualised scale of spot returns relative to `sqrt(ξ_t^t)`.
    #[serde(default = "one")]
    pub sigma_z: f64,
    /// Annualised drift of `Z`.
    #[serde(default)]
    pub mu_z: f64,
    /// Apply the real-measure factor drifts `μ`.
    #[serde(default)]
    pub drift: bool,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
}

fn one() -> f64 {
    1.0
}
fn gaussian() -> Innovation {
    Innovation::Gaussian
}
fn default_chunk() -> usize {
    2048
}

impl SimConfig {
    pub fn new(paths: usize, steps: usize, seed: u64) -> Self {
        Self {
            paths,
            steps,
            seed,
            lambda_scale: 1.0,
            innovation: Innovation::Gaussian,
            sigma_z: 1.0,
            mu_z: 0.0,
            drift: false,
            chunk: default_chunk(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * DT
    }
}

/// Simulation state after a step, handed to observers.
#[derive(Debug, Clone)]
pub struct StepState<'a> {
    sim: &'a Simulator,
    /// Steps completed.
    pub step: usize,
    /// Time after the step, years.
    pub t: f64,
    pub spot: f64,
    /// Arithmetic spot return over the step.
    pub ret: f64,
    /// Standardised spot innovation of the step.
    pub dz_bar: f64,
    /// `ξ` at the start of the step (the spot variance used for `ret`).
    pub xi_prev: f64,
    /// Factor increments of the step.
    pub dw: [f64; MAX_FACTORS],
    /// `λ_t/λ_∞` at the start of the step.
    pub lambda_ratio: f64,
    y: [f64; MAX_FACTORS],
    q: [[f64; MAX_FACTORS]; MAX_FACTORS],
}

impl StepState<'_> {
    /// `ξ_t^{t+τ}`.
    pub fn xi(&self, tau: f64) -> f64 {
        self.sim.xi(self.t, tau, &self.y, &self.q)
    }

    /// `sqrt((1/ΔT) ∫_{τ1}^{τ1+ΔT} ξ_t^{t+τ} dτ)` by 16-point Gauss-Legendre.
    pub fn var_strike(&self, tau1: f64, window: f64) -> f64 {
        let (x, w) = gl16();
        let (c, h) = (tau1 + 0.5 * window, 0.5 * window);
        let s: f64 = x.iter().zip(w).map(|(xi, wi)| wi * self.xi(c + h * xi)).sum();
        (0.5 * s).sqrt()
    }

    /// `(1/ΔT) ∫ ξ_t^{t+τ} e^{-k τ} dτ` over the window, used for model pricing.
    pub fn kernel_mean(&self, tau1: f64, window: f64, k: f64, shift: f64) -> f64 {
        let (x, w) = gl16();
        let (c, h) = (tau1 + 0.5 * window, 0.5 * window);
        let s: f64 = x.iter().zip(w).map(|(xi, wi)| wi * self.xi(c + h * xi) * (-k * (c + h * xi - shift)).exp()).sum();
        0.5 * s
    }

    pub fn n_factors(&self) -> usize {
        self.sim.params.n()
    }

    pub fn params(&self) -> &ModelParams {
        &self.sim.params
    }
}

/// Accumulates statistics along paths. One observer per chunk; chunks are
/// merged in a fixed order.
pub trait PathObserver: Send {
    fn on_start(&mut self, _st: &StepState) {}
    fn on_step(&mut self, st: &StepState);
    fn on_path_end(&mut self, _st: &StepState) {}
    fn merge(&mut self, other: Self)
    where
        Self: Sized;
}

#[derive(Debug, Clone)]
pub struct Simulator {
    curve0: VarianceCurve,
    params: ModelParams,
    coupling: Option<Coupling>,
    lambda: Option<LambdaDynamics>,
    cfg: SimConfig,
    fleishman: Option<Fleishman>,
    decay: [f64; MAX_FACTORS],
    pair_decay: [[f64; MAX_FACTORS]; MAX_FACTORS],
    exact_chol: [[f64; MAX_FACTORS]; MAX_FACTORS],
    exact_var: [[f64; MAX_FACTORS]; MAX_FACTORS],
    u_chol: Vec<Vec<f64>>,
    drift: [f64; MAX_FACTORS],
}

impl Simulator {
    pub fn new(curve0: VarianceCurve, params: &ModelParams, cfg: SimConfig) -> Result<Self> {
        if cfg.paths == 0 || cfg.steps == 0 || cfg.chunk == 0 {
            return Err(invalid("paths, steps and chunk must be positive"));
        }
        if params.n() > MAX_FACTORS {
            return Err(invalid("too many factors"));
        }
        if !(cfg.lambda_scale >= 0.0) || !(cfg.sigma_z > 0.0) {
            return Err(invalid("lambda_scale must be non-negative and sigma_z positive"));
        }
        let params = params.scaled(cfg.lambda_scale);
        let n = params.n();
        let fleishman = match cfg.innovation {
            Innovation::Gaussian => None,
            Innovation::Skewed { skew, kurt } => Some(Fleishman::new(skew, kurt)?),
        };
        let mut decay = [0.0; MAX_FACTORS];
        let mut pair_decay = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        let mut cov = DMatrix::zeros(n, n);
        let mut exact_var = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        for a in 0..n {
            decay[a] = (-params.k[a] * DT).exp();
            for b in 0..n {
                let ks = params.k[a] + params.k[b];
                pair_decay[a][b] = (-ks * DT).exp();
                exact_var[a][b] = DT * g(ks * DT);
                cov[(a, b)] = params.rho[a][b] * exact_var[a][b];
            }
        }
        let mut exact_chol = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        let l = match cov.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                // perfectly correlated factors: fall back to the repaired correlation root
                let root = correlation_cholesky(&params.rho)?;
                DMatrix::from_fn(n, n, |i, j| root[i][j] * exact_var[i][i].sqrt())
            }
        };
        for i in 0..n {
            for j in 0..n {
                exact_chol[i][j] = l[(i, j)];
            }
        }
        let mut drift = [0.0; MAX_FACTORS];
        if cfg.drift {
            for (a, m) in params.factor_drift_annualized().iter().enumerate() {
                drift[a] = *m;
            }
        }
        Ok(Self {
            curve0,
            params,
            coupling: None,
            lambda: None,
            cfg,
            fleishman,
            decay,
            pair_decay,
            exact_chol,
            exact_var,
            u_chol: Vec::new(),
            drift,
        })
    }

    pub fn with_coupling(mut self, c: Coupling) -> Result<Self> {
        let n = self.params.n();
        if c.a.len() != n || c.b.len() != n || c.gamma.len() != n || c.u_corr.len() != n {
            return Err(invalid("coupling size differs from factor count"));
        }
        self.u_chol = correlation_cholesky(&c.u_corr)?;
        self.coupling = Some(c);
        Ok(self)
    }

    pub fn with_lambda(mut self, l: LambdaDynamics) -> Result<Self> {
        if !(l.lambda0 > 0.0) || !(l.lambda_inf > 0.0) || !(l.k > 0.0) || !(l.sigma >= 0.0) {
            return Err(invalid("invalid vol-of-vol dynamics"));
        }
        self.lambda = Some(l);
        Ok(self)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Parameters after `λ_scale`.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn curve0(&self) -> &VarianceCurve {
        &self.curve0
    }

    fn xi(&self, t: f64, tau: f64, y: &[f64; MAX_FACTORS], q: &[[f64; MAX_FACTORS]; MAX_FACTORS]) -> f64 {
        let p = &self.params;
        let n = p.n();
        let mut e = [0.0; MAX_FACTORS];
        let mut x = 0.0;
        for a in 0..n {
            e[a] = (-p.k[a] * tau).exp();
            x += p.theta[a] * e[a] * y[a];
        }
        for a in 0..n {
            for b in 0..n {
                x -= 0.5 * p.omega(a, b) * e[a] * e[b] * q[a][b];
            }
        }
        self.curve0.eval_unchecked(t + tau) * x.exp()
    }

    fn draw_z(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x: f64 = rng.sample(StandardNormal);
        match &self.fleishman {
            Some(f) => f.transform(x),
            None => x,
        }
    }

    fn run_path<O: PathObserver>(&self, rng: &mut ChaCha8Rng, obs: &mut O) {
        let n = self.params.n();
        let sd = DT.sqrt();
        let mut y = [0.0; MAX_FACTORS];
        let mut q = [[0.0; MAX_FACTORS]; MAX_FACTORS];
        let mut spot = 1.0;
        let mut log_lambda = self.lambda.map(|l| l.lambda0.ln());
        let mut st = StepState {
            sim: self,
            step: 0,
            t: 0.0,
            spot,
            ret: 0.0,
            dz_bar: 0.0,
            xi_prev: 0.0,
            dw: [0.0; MAX_FACTORS],
            lambda_ratio: 1.0,
            y,
            q,
        };
        obs.on_start(&st);
        for step in 0..self.cfg.steps {
            let t = step as f64 * DT;
            let xi0 = self.xi(t, 0.0, &y, &q);
            let ratio = match (self.lambda, log_lambda) {
                (Some(l), Some(ll)) => (ll - l.lambda_inf.ln()).exp(),
                _ => 1.0,
            };
            let vs = ratio.sqrt();
            let z = self.draw_z(rng);
            let ret = xi0.sqrt() * (self.cfg.mu_z * DT + self.cfg.sigma_z * sd * z);
            spot *= (1.0 + ret).max(1e-12);
            let mut dw = [0.0; MAX_FACTORS];
            match &self.coupling {
                Some(c) => {
                    let mut u = [0.0; MAX_FACTORS];
                    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    for a in 0..n {
                        u[a] = (0..=a).map(|b| self.u_chol[a][b] * eps[b]).sum();
                    }
                    for a in 0..n {
                        dw[a] = sd * vs * (c.f(a, z) + c.gamma[a] * u[a]) + self.drift[a] * DT;
                        y[a] = self.decay[a] * (y[a] + dw[a]);
                    }
                    for a in 0..n {
                        for b in 0..n {
                            q[a][b] = self.pair_decay[a][b] * (q[a][b] + ratio * DT);
                        }
                    }
                }
                None => {
                    let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    for a in 0..n {
                        let ia: f64 = (0..=a).map(|b| self.exact_chol[a][b] * eps[b]).sum();
                        dw[a] = vs * ia + self.drift[a] * self.exact_var[a][a];
                        y[a] = self.decay[a] * y[a] + dw[a];
                    }
                    for a in 0..n {
                        for b in 0..n {
                            q[a][b] = self.pair_decay[a][b] * q[a][b] + ratio * self.exact_var[a][b];
                        }
                    }
                }
            }
            if let (Some(l), Some(ll)) = (self.lambda, log_lambda.as_mut()) {
                let m = l.lambda_inf.ln();
                let e = (-l.k * DT).exp();
                let sdev = l.sigma * ((1.0 - e * e) / (2.0 * l.k)).sqrt();
                let eps: f64 = rng.sample(StandardNormal);
                *ll = m + (*ll - m) * e + sdev * eps;
            }
            st.step = step + 1;
            st.t = (step + 1) as f64 * DT;
            st.spot = spot;
            st.ret = ret;
            st.dz_bar = z;
            st.xi_prev = xi0;
            st.dw = dw;
            st.lambda_ratio = ratio;
            st.y = y;
            st.q = q;
            obs.on_step(&st);
        }
        obs.on_path_end(&st);
    }

    /// Runs all paths. Chunk `c` draws from ChaCha8 stream `c` of the master
    /// seed, so results do not depend on the number of worker threads.
    pub fn simulate<O, F>(&self, make: F) -> O
    where
        O: PathObserver,
        F: Fn() -> O + Sync,
    {
        let chunks = self.cfg.paths.div_ceil(self.cfg.chunk);
        let parts: Vec<O> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(c as u64);
                let mut obs = make();
                let lo = c * self.cfg.chunk;
                let hi = (lo + self.cfg.chunk).min(self.cfg.paths);
                for _ in lo..hi {
                    self.run_path(&mut rng, &mut obs);
                }
                obs
            })
            .collect();
        let mut it = parts.into_iter();
        let mut acc = it.next().expect("at least one chunk");
        for p in it {
            acc.merge(p);
        }
        acc
    }
}

/// Streaming mean and variance (Welford, with Chan's merge).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &RunningStats) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = (self.n + o.n) as f64;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n;
        self.n += o.n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl From<RunningStats> for Estimate {
    fn from(s: RunningStats) -> Self {
        Self { value: s.mean, se: s.se() }
    }
}

/// Records `sqrt((1/ΔT) ∫ ξ_{T1}^u du)` at a given step for several windows.
#[derive(Debug, Clone)]
pub struct VixObserver {
    pub at_step: usize,
    pub window: f64,
    pub stats: RunningStats,
}

impl PathObserver for VixObserver {
    fn on_start(&mut self, st: &StepState) {
        if self.at_step == 0 {
            self.stats.push(st.var_strike(0.0, self.window));
        }
    }

    fn on_step(&mut self, st: &StepState) {
        if st.step == self.at_step {
            self.stats.push(st.var_strike(0.0, self.window));
        }
    }

    fn merge(&mut self, other: Self) {
        self.stats.merge(&other.stats);
    }
}

/// Monte Carlo VIX future price: expectation of the realised index at `T1`.
pub fn mc_vix_future(sim: &Simulator, t1: f64) -> Result<Estimate> {
    let at_step = (t1 / DT).round() as usize;
    if (at_step as f64 * DT - t1).abs() > 1e-9 {
        return Err(invalid(format!("T1 = {t1} is not on the daily grid")));
    }
    if at_step > sim.config().steps {
        return Err(invalid("simulation horizon shorter than T1"));
    }
    let o = sim.simulate(|| VixObserver { at_step, window: VIX_WINDOW, stats: RunningStats::default() });
    Ok(o.stats.into())
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Undiscounted Black-Scholes call on a forward normalised to 1.
pub fn bs_call(strike: f64, vol: f64, t: f64) -> f64 {
    if vol <= 0.0 || t <= 0.0 {
        return (1.0 - strike).max(0.0);
    }
    let s = vol * t.sqrt();
    let d1 = (-strike.ln() + 0.5 * s * s) / s;
    norm_cdf(d1) - strike * norm_cdf(d1 - s)
}

/// Implied vol of a normalised call by bracketed root finding; `None` when the
/// price is outside the no-arbitrage bounds.
pub fn bs_implied_vol(price: f64, strike: f64, t: f64) -> Option<f64> {
    let intrinsic = (1.0 - strike).max(0.0);
    if !(price > intrinsic) || !(price < 1.0) {
        return None;
    }
    find_root(|v| bs_call(strike, v, t) - price, 1e-6, 10.0, 1e-12)
}

/// Per-path binary dump: little-endian header `{paths: u64, steps: u64,
/// grid: u64, tenors: [f64; grid]}` followed, for every path and every step
/// including the start, by `spot` and `ξ` on the tenor grid.
#[derive(Debug, Clone)]
pub struct DumpObserver {
    tenors: Vec<f64>,
    pub buf: Vec<u8>,
}

impl DumpObserver {
    pub fn new(tenors: Vec<f64>) -> Self {
        Self { tenors, buf: Vec::new() }
    }

    fn row(&mut self, st: &StepState) {
        self.buf.extend_from_slice(&st.spot.to_le_bytes());
        for i in 0..self.tenors.len() {
            let x = st.xi(self.tenors[i]);
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

impl PathObserver for DumpObserver {
    fn on_start(&mut self, st: &StepState) {
        self.row(st);
    }
    fn on_step(&mut self, st: &StepState) {
        self.row(st);
    }
    fn merge(&mut self, other: Self) {
        self.buf.extend(other.buf);
    }
}

pub fn write_dump(path: &Path, sim: &Simulator, tenors: &[f64]) -> Result<()> {
    let obs = sim.simulate(|| DumpObserver::new(tenors.to_vec()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    let mut header = Vec::new();
    header.extend_from_slice(&(sim.config().paths as u64).to_le_bytes());
    header.extend_from_slice(&(sim.config().steps as u64).to_le_bytes());
    header.extend_from_slice(&(tenors.len() as u64).to_le_bytes());
    for t in tenors {
        header.extend_from_slice(&t.to_le_bytes());
    }
    f.write_all(&header).and_then(|_| f.write_all(&obs.buf)).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Ensemble summary used by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub steps: usize,
    pub terminal_spot: Estimate,
    pub realized_variance: Estimate,
    pub terminal_xi: Vec<(f64, Estimate)>,
    pub min_spot: f64,
    pub min_xi: f64,
}

#[derive(Debug, Clone)]
struct SummaryObserver {
    tenors: Vec<f64>,
    spot: RunningStats,
    rv: RunningStats,
    xi: Vec<RunningStats>,
    acc_rv: f64,
    min_spot: f64,
    min_xi: f64,
    steps: usize,
}

impl PathObserver for SummaryObserver {
    fn on_start(&mut self, _st: &StepState) {
        self.acc_rv = 0.0;
    }
    fn on_step(&mut self, st: &StepState) {
        self.acc_rv += st.ret * st.ret;
        self.min_spot = self.min_spot.min(st.spot);
        self.min_xi = self.min_xi.min(st.xi_prev);
    }
    fn on_path_end(&mut self, st: &StepState) {
        self.spot.push(st.spot);
        self.rv.push(self.acc_rv / (self.steps as f64 * DT));
        for (i, t) in self.tenors.iter().enumerate() {
            self.xi[i].push(st.xi(*t));
        }
    }
    fn merge(&mut self, o: Self) {
        self.spot.merge(&o.spot);
        self.rv.merge(&o.rv);
        for (a, b) in self.xi.iter_mut().zip(&o.xi) {
            a.merge(b);
        }
        self.min_spot = self.min_spot.min(o.min_spot);
        self.min_xi = self.min_xi.min(o.min_xi);
    }
}

pub fn summarize(sim: &Simulator, tenors: &[f64]) -> EnsembleSummary {
    let steps = sim.config().steps;
    let o = sim.simulate(|| SummaryObserver {
        tenors: tenors.to_vec(),
        spot: RunningStats::default(),
        rv: RunningStats::default(),
        xi: vec![RunningStats::default(); tenors.len()],
        acc_rv: 0.0,
        min_spot: f64::INFINITY,
        min_xi: f64::INFINITY,
        steps,
    });
    EnsembleSummary {
        paths: sim.config().paths,
        steps,
        terminal_spot: o.spot.into(),
        realized_variance: o.rv.into(),
        terminal_xi: tenors.iter().copied().zip(o.xi.into_iter().map(Estimate::from)).collect(),
        min_spot: o.min_spot,
        min_xi: o.min_xi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fleishman_moments() {
        let f = Fleishman::new(-0.5, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| f.transform(rng.sample(StandardNormal))).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
        let s = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n as f64 / v.powf(1.5);
        let k = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64 / (v * v) - 3.0;
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.01, "{m} {v}");
        assert!((s + 0.5).abs() < 0.05, "{s}");
        assert!((k - 2.0).abs() < 0.3, "{k}");
        let id = Fleishman::new(0.0, 0.0).unwrap();
        assert!((id.b - 1.0).abs() < 1e-12 && id.c.abs() < 1e-12 && id.d.abs() < 1e-12);
    }

    #[test]
    fn black_scholes_round_trip() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-10);
        let p = bs_call(1.1, 0.25, 0.5);
        let v = bs_implied_vol(p, 1.1, 0.5).unwrap();
        assert!((v - 0.25).abs() < 1e-10);
        assert!(bs_implied_vol(0.0, 1.1, 0.5).is_none());
        // put-call parity at the money: C = P, C ≈ 0.4 σ sqrt(T)
        assert!((bs_call(1.0, 0.2, 1.0) - 0.079_655_674_554_057_99).abs() < 1e-10);
    }

    #[test]
    fn frozen_curve_without_vol_of_vol() {
        let c = VarianceCurve::from_fn(|t| 0.03 + 0.02 * t, 2.0);
        let p = ModelParams::paper().scaled(0.0);
        let sim = Simulator::new(c.clone(), &p, SimConfig::new(10, 21, 1)).unwrap();
        let e = mc_vix_future(&sim, 21.0 * DT).unwrap();
        let k = c.forward_var_strike(21.0 * DT, 21.0 * DT + VIX_WINDOW).unwrap();
        assert!((e.value - k).abs() < 1e-10 && e.se < 1e-12);
    }

    #[test]
    fn martingale_curve() {
        let c = VarianceCurve::flat(0.04, 3.0);
        let p = ModelParams::paper();
        let sim = Simulator::new(c, &p, SimConfig::new(20_000, 63, 7)).unwrap();
        let s = summarize(&sim, &[0.0, 0.1, 0.5, 1.0]);
        for (t, e) in &s.terminal_xi {
            assert!((e.value - 0.04).abs() < 4.0 * e.se, "{t}: {e:?}");
        }
        assert!(s.min_spot > 0.0 && s.min_xi > 0.0);
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let c = VarianceCurve::flat(0.04, 2.0);
        let mut cfg = SimConfig::new(3000, 10, 11);
        cfg.chunk = 500;
        let sim = Simulator::new(c, &ModelParams::paper(), cfg).unwrap();
        let a = summarize(&sim, &[0.1]);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| summarize(&sim, &[0.1]));
        assert_eq!(a.terminal_xi[0].1, b.terminal_xi[0].1);
        assert_eq!(a.terminal_spot, b.terminal_spot);
    }

    #[test]
    fn coupling_correlations() {
        let p = ModelParams::paper();
        let cp = Coupling::consistent(&p, &[0.0, 0.0], &[0.6, 0.5], 0.0, 0.0).unwrap();
        assert!((cp.gamma[0] - 0.8).abs() < 1e-12);
        let sim = Simulator::new(VarianceCurve::flat(0.04, 2.0), &p, SimConfig::new(4000, 50, 3)).unwrap().with_coupling(cp).unwrap();
        #[derive(Clone, Default)]
        struct C {
            zw: RunningStats,
            ww: RunningStats,
        }
        impl PathObserver for C {
            fn on_step(&mut self, st: &StepState) {
                let w0 = st.dw[0] / DT.sqrt();
                let w1 = st.dw[1] / DT.sqrt();
                self.zw.push(st.dz_bar * w0);
                self.ww.push(w0 * w1);
            }
            fn merge(&mut self, o: Self) {
                self.zw.merge(&o.zw);
                self.ww.merge(&o.ww);
            }
        }
        let c = sim.simulate(C::default);
        assert!((c.zw.mean + 0.6).abs() < 4.0 * c.zw.se(), "{:?}", c.zw);
        assert!((c.ww.mean - 0.51).abs() < 4.0 * c.ww.se(), "{:?}", c.ww);
    }
}
