//! Synthetic market: one simulated path of spot and variance curve, with
//! daily VIX futures priced by the model and perturbed by liquidity-scaled
//! multiplicative noise.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curve::VarianceCurve;
use crate::error::{invalid, io_err, Result};
use crate::market_data::{
    build_observations, liquidity_sigma, vix_adjustment_factor, window_returns, Calendar, FuturesRow, IngestConfig,
    LiquidityConfig, ObservationSet, SpotSeries,
};
use crate::model::{price_from_means, ModelParams};
use crate::montecarlo::{Innovation, PathObserver, SimConfig, Simulator, StepState};
use crate::spotvol::{NonlinearFit, SpotStats};
use crate::VIX_WINDOW;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "ModelParams::paper")]
    pub params: ModelParams,
    /// Quadratic coupling `(a, b)` per factor; `None` draws Gaussian factors
    /// independent of the spot innovation.
    #[serde(default = "default_coupling")]
    pub coupling: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "SpotStats::paper")]
    pub spot_stats: SpotStats,
    /// Flat initial forward variance.
    #[serde(default = "default_xi0")]
    pub xi0: f64,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(default = "default_n_futures")]
    pub n_futures: usize,
    /// Volume of the front contract; each later contract trades `volume_decay` times less.
    #[serde(default = "default_volume")]
    pub front_volume: f64,
    #[serde(default = "default_volume_decay")]
    pub volume_decay: f64,
    /// Multiplies the liquidity-implied error vol; 0 gives exact model prices.
    #[serde(default = "one")]
    pub noise_scale: f64,
    #[serde(default)]
    pub liquidity: LiquidityConfig,
    /// Apply the real-measure factor drifts.
    #[serde(default = "yes")]
    pub drift: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_coupling() -> Option<(Vec<f64>, Vec<f64>)> {
    Some((vec![0.055871, 0.0], vec![0.55688, 0.90877]))
}
fn default_xi0() -> f64 {
    0.055
}
fn default_days() -> usize {
    1500
}
fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date")
}
fn default_n_futures() -> usize {
    7
}
fn default_volume() -> f64 {
    40_000.0
}
fn default_volume_decay() -> f64 {
    0.55
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_seed() -> u64 {
    20_240_101
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Ground truth written next to the generated files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SyntheticSpec,
    pub fit: Option<NonlinearFit>,
    pub dates: Vec<NaiveDate>,
    /// `ξ_t^t` per day.
    pub xi_spot: Vec<f64>,
    /// Factor increments `δW^α` per day (the first entry is zero).
    pub dw: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub futures: Vec<FuturesRow>,
    pub spot: SpotSeries,
    pub vix: BTreeMap<NaiveDate, f64>,
    pub truth: Truth,
}

impl SyntheticMarket {
    pub fn observations(&self, cfg: &IngestConfig) -> Result<ObservationSet> {
        build_observations(&self.futures, Some(&self.vix), &Calendar::weekdays(), cfg)
    }
}

/// Third Wednesday of the month.
pub fn third_wednesday(year: i32, month: u32) -> NaiveDate {
    NaiveDate::from_weekday_of_month_opt(year, month, Weekday::Wed, 3).expect("every month has three Wednesdays")
}

/// The first `n` monthly expiries strictly after `date`.
pub fn live_expiries(date: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let (mut y, mut m) = (date.year(), date.month());
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let e = third_wednesday(y, m);
        if e > date {
            out.push(e);
        }
        m += 1;
        if m > 12 {
            m = 1;
            y += 1;
        }
    }
    out
}

struct DayRecord {
    spot: f64,
    xi_spot: f64,
    dw: Vec<f64>,
    prices: Vec<f64>,
}

struct Recorder {
    schedule: Vec<Vec<f64>>,
    days: Vec<DayRecord>,
    error: Option<String>,
}

impl Recorder {
    fn record(&mut self, st: &StepState, dw: Vec<f64>) {
        let p = st.params();
        let mut prices = Vec::new();
        for &tau1 in &self.schedule[st.step] {
            let strike = st.var_strike(tau1, VIX_WINDOW);
            let means: Vec<f64> = p.k.iter().map(|&k| st.kernel_mean(tau1, VIX_WINDOW, k, tau1)).collect();
            match price_from_means(p, tau1, strike, &means) {
                Ok(v) => prices.push(v.price),
                Err(e) => {
                    self.error.get_or_insert_with(|| e.to_string());
                    prices.push(f64::NAN);
                }
            }
        }
        self.days.push(DayRecord { spot: st.spot, xi_spot: st.xi(0.0), dw, prices });
    }
}

impl PathObserver for Recorder {
    fn on_start(&mut self, st: &StepState) {
        self.record(st, vec![0.0; st.n_factors()]);
    }
    fn on_step(&mut self, st: &StepState) {
        if st.step < self.schedule.len() {
            self.record(st, st.dw[..st.n_factors()].to_vec());
        }
    }
    fn merge(&mut self, _other: Self) {}
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticMarket> {
    if spec.days < 2 || spec.n_futures == 0 {
        return Err(invalid("need at least two days and one future"));
    }
    if !(spec.xi0 > 0.0) || !(spec.noise_scale >= 0.0) {
        return Err(invalid("xi0 must be positive and noise_scale non-negative"));
    }
    let cal = Calendar::weekdays();
    let mut dates = Vec::with_capacity(spec.days);
    let mut d = if cal.is_business_day(spec.start) { spec.start } else { cal.next_business_day(spec.start) };
    for _ in 0..spec.days {
        dates.push(d);
        d = cal.next_business_day(d);
    }
    let expiries: Vec<Vec<NaiveDate>> = dates.iter().map(|&d| live_expiries(d, spec.n_futures)).collect();
    let mut schedule: Vec<Vec<f64>> = Vec::with_capacity(spec.days);
    for (d, ex) in dates.iter().zip(&expiries) {
        let mut taus = vec![0.0];
        taus.extend(ex.iter().map(|e| cal.year_fraction(*d, *e)));
        schedule.push(taus);
    }
    let horizon = schedule.iter().flatten().fold(0.0f64, |m, t| m.max(*t)) + VIX_WINDOW + spec.days as f64 / 252.0 + 1.0;
    let mut cfg = SimConfig::new(1, spec.days - 1, spec.seed);
    cfg.drift = spec.drift;
    cfg.sigma_z = spec.spot_stats.sigma_z;
    cfg.mu_z = spec.spot_stats.mu_z;
    let mut fit = None;
    let mut sim = Simulator::new(VarianceCurve::flat(spec.xi0, horizon), &spec.params, cfg.clone())?;
    if let Some((a, b)) = &spec.coupling {
        let f = NonlinearFit::from_coefficients(&spec.params, a, b, spec.spot_stats.skew, spec.spot_stats.kurt)?;
        let mut c2 = cfg;
        if spec.spot_stats.skew != 0.0 || spec.spot_stats.kurt != 0.0 {
            c2.innovation = Innovation::Skewed { skew: spec.spot_stats.skew, kurt: spec.spot_stats.kurt };
        }
        sim = Simulator::new(VarianceCurve::flat(spec.xi0, horizon), &spec.params, c2)?.with_coupling(f.coupling())?;
        fit = Some(f);
    }
    let sched = schedule.clone();
    let rec = sim.simulate(move || Recorder { schedule: sched.clone(), days: Vec::new(), error: None });
    if let Some(e) = rec.error {
        return Err(crate::Error::Numerical(format!("synthetic pricing failed: {e}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let sd = crate::DT.sqrt();
    let mut futures = Vec::new();
    let mut vix = BTreeMap::new();
    for (i, day) in rec.days.iter().enumerate() {
        let date = dates[i];
        let vf = vix_adjustment_factor(window_returns(date, &cal) as f64)?;
        vix.insert(date, day.prices[0] / vf * 100.0);
        for (j, e) in expiries[i].iter().enumerate() {
            let volume = (spec.front_volume * spec.volume_decay.powi(j as i32)).round().max(1.0);
            let sigma = spec.noise_scale * liquidity_sigma(volume, &spec.liquidity);
            let eta: f64 = rng.sample(StandardNormal);
            let noisy = day.prices[j + 1] * (1.0 + sigma * sd * eta);
            let factor = vix_adjustment_factor(window_returns(*e, &cal) as f64)?;
            futures.push(FuturesRow { date, expiry: *e, settle: noisy / factor * 100.0, volume });
        }
    }
    let spot = SpotSeries::new(dates.clone(), rec.days.iter().map(|d| 100.0 * d.spot).collect())?;
    let truth = Truth {
        spec: spec.clone(),
        fit,
        dates,
        xi_spot: rec.days.iter().map(|d| d.xi_spot).collect(),
        dw: rec.days.iter().map(|d| d.dw.clone()).collect(),
    };
    Ok(SyntheticMarket { futures, spot, vix, truth })
}

/// Writes `futures.csv`, `spot.csv`, `vix.csv` and `truth.json` into `dir`.
pub fn write_market(dir: &Path, m: &SyntheticMarket) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("futures.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["date", "expiry", "settle", "volume"])?;
    for r in &m.futures {
        w.write_record([r.date.to_string(), r.expiry.to_string(), format!("{:.8}", r.settle), format!("{}", r.volume)])
            ?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join("spot.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["date", "close"])?;
    for (d, c) in m.spot.dates.iter().zip(&m.spot.closes) {
        w.write_record([d.to_string(), format!("{c:.10}")])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join("vix.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["date", "level"])?;
    for (d, v) in &m.vix {
        w.write_record([d.to_string(), format!("{v:.8}")])?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;

    let path = dir.join("truth.json");
    let text = serde_json::to_string_pretty(&m.truth)?;
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expiry_schedule() {
        let d = NaiveDate::from_ymd_opt(2020, 1, 15).unwrap();
        let e = live_expiries(d, 7);
        assert_eq!(e.len(), 7);
        assert_eq!(e[0], NaiveDate::from_ymd_opt(2020, 2, 19).unwrap());
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert!(e.iter().all(|x| x.weekday() == Weekday::Wed));
    }

    #[test]
    fn frozen_curve_without_noise() {
        let spec = SyntheticSpec {
            params: ModelParams::paper().scaled(0.0),
            coupling: None,
            noise_scale: 0.0,
            days: 40,
            ..SyntheticSpec::default()
        };
        let m = generate(&spec).unwrap();
        let obs = m.observations(&IngestConfig::default()).unwrap();
        assert_eq!(obs.days.len(), 40);
        for day in &obs.days {
            assert_eq!(day.futures.len(), 7);
            for q in &day.futures {
                assert!((q.price - 0.055f64.sqrt()).abs() < 1e-8, "{}", q.price);
            }
            assert!((day.vix_cash.unwrap() - 0.055f64.sqrt()).abs() < 1e-8);
        }
        assert!(m.truth.xi_spot.iter().all(|x| (x - 0.055).abs() < 1e-14));
    }

    #[test]
    fn round_trip_files() {
        let spec = SyntheticSpec { days: 30, ..SyntheticSpec::default() };
        let m = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_market(dir.path(), &m).unwrap();
        let rows = crate::market_data::load_futures(&dir.path().join("futures.csv")).unwrap();
        assert_eq!(rows.len(), 30 * 7);
        let spot = crate::market_data::load_spot(&dir.path().join("spot.csv")).unwrap();
        assert_eq!(spot.closes.len(), 30);
        let t: Truth = serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
        assert_eq!(t.dates.len(), 30);
        let again = generate(&spec).unwrap();
        assert_eq!(again.futures[100].settle, m.futures[100].settle);
    }
}
