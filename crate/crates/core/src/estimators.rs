//! Monte Carlo estimators paired with the closed forms of `spotvol`,
//! `analytics` and `model`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::price_from_means;
use crate::montecarlo::{bs_implied_vol, Estimate, PathObserver, RunningStats, Simulator, StepState};
use crate::quad::gl16;
use crate::{DT, VIX_WINDOW};

fn check_horizon(sim: &Simulator, steps: usize) -> Result<()> {
    if steps == 0 || steps > sim.config().steps {
        return Err(invalid(format!("need 1..={} steps, got {steps}", sim.config().steps)));
    }
    Ok(())
}

/// Leverage and clustering estimators at lags in days.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpotVolEstimates {
    pub lags: Vec<usize>,
    /// `E[r_t r²_{t+Δ}] / (sqrt(ξ_t^t δt) ξ_t^{t+Δ} δt)`.
    pub leverage: Vec<Estimate>,
    /// `E[(r_t²/(ξ_t^t δt) - 1) r²_{t+Δ}] / (ξ_t^{t+Δ} δt)`.
    pub clustering: Vec<Estimate>,
}

struct SpotVolObserver {
    lags: Vec<usize>,
    z: Vec<f64>,
    r2: Vec<f64>,
    fwd: Vec<f64>,
    lev: Vec<RunningStats>,
    clu: Vec<RunningStats>,
}

impl SpotVolObserver {
    fn record_fwd(&mut self, st: &StepState) {
        for &l in &self.lags {
            self.fwd.push(st.xi(l as f64 * DT));
        }
    }
}

impl PathObserver for SpotVolObserver {
    fn on_start(&mut self, st: &StepState) {
        self.record_fwd(st);
    }

    fn on_step(&mut self, st: &StepState) {
        self.z.push(st.ret / (st.xi_prev * DT).sqrt());
        self.r2.push(st.ret * st.ret);
        self.record_fwd(st);
    }

    fn on_path_end(&mut self, _st: &StepState) {
        let n = self.z.len();
        let nl = self.lags.len();
        for (j, &l) in self.lags.iter().enumerate() {
            if l >= n {
                continue;
            }
            let (mut sl, mut sc) = (0.0, 0.0);
            for i in 0..n - l {
                let w = self.r2[i + l] / (self.fwd[i * nl + j] * DT);
                sl += self.z[i] * w;
                sc += (self.z[i] * self.z[i] - 1.0) * w;
            }
            let m = (n - l) as f64;
            self.lev[j].push(sl / m);
            self.clu[j].push(sc / m);
        }
        self.z.clear();
        self.r2.clear();
        self.fwd.clear();
    }

    fn merge(&mut self, o: Self) {
        for j in 0..self.lags.len() {
            self.lev[j].merge(&o.lev[j]);
            self.clu[j].merge(&o.clu[j]);
        }
    }
}

/// Path-averaged leverage and clustering estimators; the standard error is
/// taken across paths, so overlapping windows within a path are handled.
pub fn mc_spot_vol(sim: &Simulator, lags: &[usize]) -> Result<SpotVolEstimates> {
    let max = lags.iter().copied().max().ok_or_else(|| invalid("no lags"))?;
    check_horizon(sim, max + 1)?;
    if sim.config().paths < 2 {
        return Err(invalid("need at least two paths"));
    }
    let n = lags.len();
    let o = sim.simulate(|| SpotVolObserver {
        lags: lags.to_vec(),
        z: Vec::new(),
        r2: Vec::new(),
        fwd: Vec::new(),
        lev: vec![RunningStats::default(); n],
        clu: vec![RunningStats::default(); n],
    });
    Ok(SpotVolEstimates {
        lags: lags.to_vec(),
        leverage: o.lev.into_iter().map(Estimate::from).collect(),
        clustering: o.clu.into_iter().map(Estimate::from).collect(),
    })
}

/// Sample skewness of the cumulative return `Σ r_t` over each horizon, with
/// a standard error from independent batches of paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkewnessEstimates {
    pub horizons: Vec<usize>,
    pub skewness: Vec<Estimate>,
    pub batches: usize,
}

#[derive(Default, Clone)]
struct PowerSums {
    n: f64,
    s: [f64; 3],
}

impl PowerSums {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.s[0] += x;
        self.s[1] += x * x;
        self.s[2] += x * x * x;
    }

    fn skew(&self) -> f64 {
        let m = self.s[0] / self.n;
        let m2 = self.s[1] / self.n - m * m;
        let m3 = self.s[2] / self.n - 3.0 * m * self.s[1] / self.n + 2.0 * m * m * m;
        m3 / m2.powf(1.5)
    }
}

struct SkewObserver {
    horizons: Vec<usize>,
    cum: f64,
    batch: usize,
    current: Vec<PowerSums>,
    skews: Vec<Vec<f64>>,
}

impl PathObserver for SkewObserver {
    fn on_start(&mut self, _st: &StepState) {
        self.cum = 0.0;
    }

    fn on_step(&mut self, st: &StepState) {
        self.cum += st.ret;
        if let Some(j) = self.horizons.iter().position(|&h| h == st.step) {
            self.current[j].push(self.cum);
        }
    }

    fn on_path_end(&mut self, _st: &StepState) {
        if self.current[0].n as usize == self.batch {
            for (j, c) in self.current.iter_mut().enumerate() {
                self.skews[j].push(c.skew());
                *c = PowerSums::default();
            }
        }
    }

    fn merge(&mut self, o: Self) {
        for (a, b) in self.skews.iter_mut().zip(o.skews) {
            a.extend(b);
        }
    }
}

/// `batch` must divide the chunk size so batches never straddle chunks.
pub fn mc_return_skewness(sim: &Simulator, horizons: &[usize], batch: usize) -> Result<SkewnessEstimates> {
    let max = horizons.iter().copied().max().ok_or_else(|| invalid("no horizons"))?;
    check_horizon(sim, max)?;
    let chunk = sim.config().chunk;
    if batch < 100 || chunk % batch != 0 {
        return Err(invalid(format!("batch {batch} must be >= 100 and divide the chunk size {chunk}")));
    }
    let n = horizons.len();
    let o = sim.simulate(|| SkewObserver {
        horizons: horizons.to_vec(),
        cum: 0.0,
        batch,
        current: vec![PowerSums::default(); n],
        skews: vec![Vec::new(); n],
    });
    let batches = o.skews[0].len();
    if batches < 2 {
        return Err(invalid("fewer than two complete batches"));
    }
    let skewness = o
        .skews
        .iter()
        .map(|v| {
            let mut s = RunningStats::default();
            v.iter().for_each(|x| s.push(*x));
            s.into()
        })
        .collect();
    Ok(SkewnessEstimates { horizons: horizons.to_vec(), skewness, batches })
}

struct TerminalObserver {
    at: usize,
    spots: Vec<f64>,
}

impl PathObserver for TerminalObserver {
    fn on_step(&mut self, st: &StepState) {
        if st.step == self.at {
            self.spots.push(st.spot);
        }
    }
    fn merge(&mut self, o: Self) {
        self.spots.extend(o.spots);
    }
}

/// Implied-vol smile from simulated call prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmileEstimate {
    pub maturity: f64,
    /// Relative strikes `K/S_0`.
    pub strikes: Vec<f64>,
    /// `None` when the price falls outside the arbitrage bounds.
    pub implied_vols: Vec<Option<Estimate>>,
    pub skipped: usize,
    /// Symmetric difference quotient `(σ(1+d) - σ(1-d)) / 2d` with a
    /// delta-method standard error.
    pub skew: Option<Estimate>,
    /// At-the-money implied vol.
    pub atm: Option<Estimate>,
}

fn vega(strike: f64, vol: f64, t: f64) -> f64 {
    let s = vol * t.sqrt();
    let d1 = (-strike.ln() + 0.5 * s * s) / s;
    (-0.5 * d1 * d1).exp() / (2.0 * std::f64::consts::PI).sqrt() * t.sqrt()
}

/// Black-Scholes inversion of simulated calls at `1` and `1 ± d`.
pub fn mc_smile(sim: &Simulator, steps: usize, d: f64) -> Result<SmileEstimate> {
    check_horizon(sim, steps)?;
    if !(d > 0.0 && d < 0.5) {
        return Err(invalid("strike offset must lie in (0, 0.5)"));
    }
    let t = steps as f64 * DT;
    let o = sim.simulate(|| TerminalObserver { at: steps, spots: Vec::new() });
    let strikes = vec![1.0 - d, 1.0, 1.0 + d];
    let mut ivs = Vec::new();
    let mut vegas = Vec::new();
    let mut skipped = 0;
    for &k in &strikes {
        let mut s = RunningStats::default();
        o.spots.iter().for_each(|x| s.push((x - k).max(0.0)));
        match bs_implied_vol(s.mean, k, t) {
            Some(v) => {
                let ve = vega(k, v, t);
                ivs.push(Some(Estimate { value: v, se: s.se() / ve }));
                vegas.push(Some(ve));
            }
            None => {
                skipped += 1;
                ivs.push(None);
                vegas.push(None);
            }
        }
    }
    let skew = match (ivs[0], ivs[2], vegas[0], vegas[2]) {
        (Some(lo), Some(hi), Some(vl), Some(vh)) => {
            let mut s = RunningStats::default();
            o.spots.iter().for_each(|x| s.push(((x - strikes[2]).max(0.0) / vh - (x - strikes[0]).max(0.0) / vl) / (2.0 * d)));
            Some(Estimate { value: (hi.value - lo.value) / (2.0 * d), se: s.se() })
        }
        _ => None,
    };
    Ok(SmileEstimate { maturity: t, atm: ivs[1], strikes, implied_vols: ivs, skipped, skew })
}

/// Mark-to-market variance of a variance swap:
/// `E[Σ_t (𝕍_{t+δt} - 𝕍_t)²] / (𝕍_0² ΔT)`, with
/// `𝕍_t = (Σ_{s<t} r_s² + ∫_t^T ξ_t^u du) / ΔT`. Increments are measured in
/// units of the initial strike `𝕍_0`.
pub fn mc_varswap_variance(sim: &Simulator, steps: usize) -> Result<Estimate> {
    check_horizon(sim, steps)?;
    struct O {
        n: usize,
        acc: f64,
        v0: f64,
        prev: f64,
        sum: f64,
        stats: RunningStats,
    }
    impl O {
        fn value(&self, st: &StepState) -> f64 {
            let rem = (self.n - st.step) as f64 * DT;
            let implied = if rem > 0.0 {
                let (x, w) = gl16();
                let h = 0.5 * rem;
                h * x.iter().zip(w).map(|(xi, wi)| wi * st.xi(h * (1.0 + xi))).sum::<f64>()
            } else {
                0.0
            };
            (self.acc + implied) / (self.n as f64 * DT)
        }
    }
    impl PathObserver for O {
        fn on_start(&mut self, st: &StepState) {
            self.acc = 0.0;
            self.sum = 0.0;
            self.prev = self.value(st);
            self.v0 = self.prev;
        }
        fn on_step(&mut self, st: &StepState) {
            if st.step > self.n {
                return;
            }
            self.acc += st.ret * st.ret;
            let v = self.value(st);
            self.sum += ((v - self.prev) / self.v0).powi(2);
            self.prev = v;
            if st.step == self.n {
                self.stats.push(self.sum / (self.n as f64 * DT));
            }
        }
        fn merge(&mut self, o: Self) {
            self.stats.merge(&o.stats);
        }
    }
    let o = sim.simulate(|| O { n: steps, acc: 0.0, v0: 0.0, prev: 0.0, sum: 0.0, stats: RunningStats::default() });
    Ok(o.stats.into())
}

/// Annualised one-day variance of `log 𝒱^{T1}` for futures at the given
/// tenors (years), starting from the simulator's initial curve. The day is
/// centred on the tenor: the future runs from `τ + δt/2` to `τ - δt/2`.
/// Prices are model prices from the simulated state.
pub fn mc_future_vol(sim: &Simulator, tenors: &[f64]) -> Result<Vec<Estimate>> {
    check_horizon(sim, 1)?;
    if tenors.iter().any(|&t| !(t > DT)) {
        return Err(invalid("future tenors must exceed one day"));
    }
    struct O {
        tenors: Vec<f64>,
        start: Vec<f64>,
        stats: Vec<RunningStats>,
        error: Option<Error>,
    }
    impl O {
        fn log_price(&mut self, st: &StepState, tau1: f64) -> f64 {
            let p = st.params();
            let strike = st.var_strike(tau1, VIX_WINDOW);
            let means: Vec<f64> = p.k.iter().map(|&k| st.kernel_mean(tau1, VIX_WINDOW, k, tau1)).collect();
            match price_from_means(p, tau1, strike, &means) {
                Ok(v) => v.price.ln(),
                Err(e) => {
                    self.error.get_or_insert(e);
                    f64::NAN
                }
            }
        }
    }
    impl PathObserver for O {
        fn on_start(&mut self, st: &StepState) {
            self.start.clear();
            for j in 0..self.tenors.len() {
                let x = self.log_price(st, self.tenors[j] + 0.5 * DT);
                self.start.push(x);
            }
        }
        fn on_step(&mut self, st: &StepState) {
            if st.step != 1 {
                return;
            }
            for j in 0..self.tenors.len() {
                let x = self.log_price(st, self.tenors[j] - 0.5 * DT);
                self.stats[j].push((x - self.start[j]).powi(2) / DT);
            }
        }
        fn merge(&mut self, o: Self) {
            for (a, b) in self.stats.iter_mut().zip(&o.stats) {
                a.merge(b);
            }
            if self.error.is_none() {
                self.error = o.error;
            }
        }
    }
    let n = tenors.len();
    let o = sim.simulate(|| O { tenors: tenors.to_vec(), start: Vec::new(), stats: vec![RunningStats::default(); n], error: None });
    if let Some(e) = o.error {
        return Err(e);
    }
    Ok(o.stats.into_iter().map(Estimate::from).collect())
}

/// Variance of `log VIX_τ` divided by `τ`, with the index computed from the
/// simulated curve; the first-order target is
/// [`crate::volofvol::vix_future_total_variance`].
pub fn mc_vix_log_variance(sim: &Simulator, steps: usize) -> Result<Estimate> {
    check_horizon(sim, steps)?;
    struct O {
        at: usize,
        x: Vec<f64>,
    }
    impl PathObserver for O {
        fn on_step(&mut self, st: &StepState) {
            if st.step == self.at {
                self.x.push(st.var_strike(0.0, VIX_WINDOW).ln());
            }
        }
        fn merge(&mut self, o: Self) {
            self.x.extend(o.x);
        }
    }
    let o = sim.simulate(|| O { at: steps, x: Vec::new() });
    let n = o.x.len() as f64;
    let m = o.x.iter().sum::<f64>() / n;
    let dev: Vec<f64> = o.x.iter().map(|x| (x - m).powi(2)).collect();
    let mut s = RunningStats::default();
    dev.iter().for_each(|d| s.push(*d));
    let tau = steps as f64 * DT;
    Ok(Estimate { value: s.mean * n / (n - 1.0) / tau, se: s.se() / tau })
}

/// Curves `ξ_t^{t+τ}` on a tenor grid at every `every`-th step of each path,
/// for mode analysis.
pub fn record_curves(sim: &Simulator, tenors: &[f64], every: usize) -> Vec<Vec<f64>> {
    struct O {
        tenors: Vec<f64>,
        every: usize,
        rows: Vec<Vec<f64>>,
    }
    impl PathObserver for O {
        fn on_start(&mut self, st: &StepState) {
            self.rows.push(self.tenors.iter().map(|&t| st.xi(t)).collect());
        }
        fn on_step(&mut self, st: &StepState) {
            if st.step % self.every == 0 {
                self.rows.push(self.tenors.iter().map(|&t| st.xi(t)).collect());
            }
        }
        fn merge(&mut self, o: Self) {
            self.rows.extend(o.rows);
        }
    }
    let every = every.max(1);
    sim.simulate(|| O { tenors: tenors.to_vec(), every, rows: Vec::new() }).rows
}
