//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use vardyn::analytics::term_structure_report;
use vardyn::calibration::{calibrate, extract_factors, write_grid_csv, CalibrationRecord, FactorSeries};
use vardyn::curve::VarianceCurve;
use vardyn::market_data::{build_observations, load_futures, load_levels, load_spot, Calendar, ObservationSet};
use vardyn::model::ModelParams;
use vardyn::montecarlo::{summarize, write_dump, Coupling, EnsembleSummary, SimConfig, Simulator};
use vardyn::spotvol::{
    clustering_nonlinear_share, fit_garch_direct, fit_nonlinear, garch_map, leverage_correlation, sigma_v,
    volatility_clustering, GarchCoefficients, NonlinearFit, SpotStats,
};
use vardyn::stats::{
    autocorr_check, default_mode_grid, distance_correlation, kl_modes, mode_overlap, model_modes, moments,
    risk_premium_stats, AcfReport, ModeDecomposition, MomentReport, RiskPremium,
};
use vardyn::synthetic::{generate, write_market};
use vardyn::validation::{render_table, run_all, RunArtifacts, ValidationOptions};
use vardyn::volofvol::{
    adjusted_future_variance, adjusted_future_variance_direct, fit_lambda_process, model_vvix, vix_future_total_variance,
    VolOfVolState,
};
use vardyn::{replica, DT, VIX_WINDOW};

use crate::config::{check_sim, parse_tenor, parse_tenors, RunConfig};
use crate::{Command, Common, Failure, MarketInputs};

type Res<T> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Inputs must exist before any work starts.
fn require(path: &Path) -> Res<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("input file not found: {}", path.display())))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    require(path)?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a valid artifact: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Res<()> {
    let text = serde_json::to_string_pretty(value).context("serialising output")?;
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run(cmd: Command, common: &Common) -> Res<()> {
    if let Some(p) = &common.config {
        require(p)?;
    }
    let cfg = RunConfig::load(common.config.as_deref()).map_err(usage)?;
    let seed = cfg.seed(common.seed);
    match cmd {
        Command::Ingest { market, out } => {
            let obs = observations(&market, &cfg)?;
            write_json(&out, &obs)?;
            println!("{} observation days written to {}", obs.len(), out.display());
        }
        Command::Calibrate { market, factors, out, curves, grid } => {
            let ccfg = cfg.calibration(factors, seed).map_err(usage)?;
            let obs = observations(&market, &cfg)?;
            let t0 = Instant::now();
            let result = calibrate(&obs, &ccfg)?;
            let record = CalibrationRecord { seconds: t0.elapsed().as_secs_f64(), result };
            write_json(&out, &record)?;
            if let Some(p) = curves {
                let mut s = String::new();
                for c in &record.result.curves {
                    s.push_str(&serde_json::to_string(c).context("serialising curve")?);
                    s.push('\n');
                }
                write_text(&p, &s)?;
            }
            if let Some(p) = grid {
                write_grid_csv(&p, &record.result.grid)?;
            }
            let p = &record.result.params;
            println!(
                "k {:?} theta {:?} rho {:.4} log-lik {:.2} interior {} ({:.1}s)",
                p.k,
                p.theta,
                if p.n() > 1 { p.rho[0][1] } else { 1.0 },
                record.result.loglik,
                record.result.interior,
                record.seconds
            );
        }
        Command::Extract { market, spot, calibration, out, csv } => {
            require(&spot)?;
            let record: CalibrationRecord = read_json(&calibration)?;
            let obs = observations(&market, &cfg)?;
            let spot = load_spot(&spot)?;
            let f = extract_factors(&obs, &record.result.curves, &record.result.params, &spot)?;
            write_json(&out, &f)?;
            if let Some(p) = csv {
                write_text(&p, &factors_csv(&f))?;
            }
            println!("{} factor days written to {}", f.len(), out.display());
        }
        Command::Stats { factors, out } => {
            let f: FactorSeries = read_json(&factors)?;
            let report = stats_report(&f)?;
            write_json(&out, &report)?;
            println!(
                "sigma_Z {:.1}% skew {:.2} kurt {:.2} premium {:.1}%",
                100.0 * report.spot.vol,
                report.spot.skew.unwrap_or(0.0),
                report.spot.kurt.unwrap_or(0.0),
                100.0 * report.risk_premium.premium
            );
        }
        Command::Modes { calibration, out } => {
            let record: CalibrationRecord = read_json(&calibration)?;
            let grid = default_mode_grid();
            let data = kl_modes(&record.result.curves, &grid)?;
            let model = model_modes(&record.result.params, &grid)?;
            let overlaps = (0..data.modes.len().min(model.modes.len()).min(3))
                .map(|m| mode_overlap(&data.modes[m], &model.modes[m]))
                .collect();
            let report = ModesReport { top2_share: data.cumulative_share(2), overlaps, data, model };
            write_json(&out, &report)?;
            println!("top-2 share {:.3}% overlaps {:?}", 100.0 * report.top2_share, report.overlaps);
        }
        Command::Nonlinear { factors, calibration, out } => {
            let f: FactorSeries = read_json(&factors)?;
            let record: CalibrationRecord = read_json(&calibration)?;
            let report = nonlinear_report(&f, &record.result.params)?;
            write_json(&out, &report)?;
            println!(
                "a {:?} b {:?} sigma_V {:.1}% clustering share {:.1}%",
                report.fit.a,
                report.fit.b,
                100.0 * report.sigma_v,
                100.0 * report.clustering_nonlinear_share
            );
        }
        Command::Garch { factors, calibration, nonlinear, out } => {
            let f: FactorSeries = read_json(&factors)?;
            let record: CalibrationRecord = read_json(&calibration)?;
            let nl: NonlinearReport = read_json(&nonlinear)?;
            let params = &record.result.params;
            let m = moments(&f.dz, DT)?;
            let stats = SpotStats { mu_z: m.mean, sigma_z: m.vol, skew: m.skew.unwrap_or(0.0), kurt: m.kurt.unwrap_or(0.0) };
            let curves = &record.result.curves;
            let slope = curves.iter().map(|c| c.slope(0.0)).sum::<f64>() / curves.len().max(1) as f64;
            let model = garch_map(&nl.fit, params, slope, &stats, &params.factor_drift_annualized())?;
            let returns: Vec<f64> = f.dz.iter().zip(&f.xi_spot).map(|(z, x)| z * x.sqrt()).collect();
            let direct = fit_garch_direct(&returns, &f.xi_spot)?;
            let report = GarchReport { curve_slope: slope, spot_stats: stats, model, direct };
            write_json(&out, &report)?;
            println!("model {:?}", report.model.as_array());
            println!("direct {:?}", report.direct.as_array());
        }
        Command::Vvix { calibration, tau1, lambda, out } => {
            let params = match &calibration {
                Some(p) => read_json::<CalibrationRecord>(p)?.result.params,
                None => ModelParams::paper(),
            };
            let tau1 = parse_tenor(&tau1).map_err(usage)?;
            if let Some(p) = &lambda {
                require(p)?;
            }
            let vvix = model_vvix(&params, tau1, tau1 + VIX_WINDOW)?;
            let mut report = VvixReport { tau1, vvix, dynamics: None, future_variance: Vec::new() };
            if let Some(p) = &lambda {
                let series: Vec<f64> = load_levels(p)?.into_values().collect();
                let state = fit_lambda_process(&series, DT, &[])?;
                for days in [21.0, 63.0, 126.0, 252.0] {
                    let tau = days * DT;
                    report.future_variance.push(FutureVariance {
                        tau,
                        constant: vix_future_total_variance(&params, tau, VIX_WINDOW),
                        adjusted: adjusted_future_variance(&params, &state, tau, VIX_WINDOW)?,
                        adjusted_direct: adjusted_future_variance_direct(&params, &state, tau, VIX_WINDOW)?,
                    });
                }
                report.dynamics = Some(state);
            }
            write_json(&out, &report)?;
            println!("model VVIX {:.2}%", 100.0 * vvix);
        }
        Command::Analytics { calibration, nonlinear, maturities, lambda_scale, xi0, out } => {
            let maturities = parse_tenors(&maturities).map_err(usage)?;
            let lambda = cfg.lambda_scale(lambda_scale).map_err(usage)?;
            let (params, curve) = model_and_curve(calibration.as_deref(), xi0)?;
            let fit = coupling_fit(nonlinear.as_deref(), &params)?;
            let rows = term_structure_report(&curve, &params, &fit, &maturities, lambda)?;
            let mut s = String::from(
                "maturity,atm_spread,skew,spread_linear,skew_linear,skewness,ssr,varswap_sampling,varswap_implied,varswap_shocks,varswap_total\n",
            );
            for r in &rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.maturity,
                    r.atm_spread,
                    r.skew,
                    r.spread_linear,
                    r.skew_linear,
                    r.skewness,
                    r.ssr,
                    r.varswap_sampling,
                    r.varswap_implied,
                    r.varswap_shocks,
                    r.varswap_total
                );
            }
            match out {
                Some(p) => write_text(&p, &s)?,
                None => print!("{s}"),
            }
        }
        Command::Simulate { calibration, nonlinear, paths, steps, lambda_scale, xi0, tenors, out, dump } => {
            // the spot tenor 0 is allowed here
            let tenors: Vec<f64> = tenors
                .split(',')
                .map(|t| if t.trim().parse::<f64>() == Ok(0.0) { Ok(0.0) } else { parse_tenor(t) })
                .collect::<Result<_, _>>()
                .map_err(usage)?;
            let mut sc = cfg.simulation.clone().unwrap_or_else(|| SimConfig::new(10_000, 63, seed));
            sc.seed = seed;
            if let Some(p) = paths {
                sc.paths = p;
            }
            if let Some(s) = steps {
                sc.steps = s;
            }
            sc.lambda_scale = cfg.lambda_scale(lambda_scale.or(cfg.simulation.as_ref().map(|s| s.lambda_scale))).map_err(usage)?;
            check_sim(&sc).map_err(usage)?;
            let (params, curve) = model_and_curve(calibration.as_deref(), xi0)?;
            let mut sim = Simulator::new(curve, &params, sc)?;
            if let Some(p) = &nonlinear {
                let nl: NonlinearReport = read_json(p)?;
                let f = &nl.fit;
                sim = sim.with_coupling(Coupling { a: f.a.clone(), b: f.b.clone(), gamma: f.gamma.clone(), u_corr: f.u_corr.clone() })?;
            }
            let summary: EnsembleSummary = summarize(&sim, &tenors);
            write_json(&out, &summary)?;
            if let Some(p) = dump {
                write_dump(&p, &sim, &tenors)?;
            }
            println!(
                "{} paths x {} steps: terminal spot {:.5} ± {:.5}, realised variance {:.5} ± {:.5}",
                summary.paths,
                summary.steps,
                summary.terminal_spot.value,
                summary.terminal_spot.se,
                summary.realized_variance.value,
                summary.realized_variance.se
            );
        }
        Command::Synth { days, out } => {
            let mut spec = cfg.synthetic.clone().unwrap_or_default();
            spec.seed = seed;
            if let Some(d) = days {
                if d < 2 {
                    return Err(usage("--days must be at least 2"));
                }
                spec.days = d;
            }
            let market = generate(&spec)?;
            write_market(&out, &market)?;
            println!("{} days, {} futures quotes written to {}", spec.days, market.futures.len(), out.display());
        }
        Command::Validate { run, only, out, strict } => {
            let only = match only {
                Some(s) => s
                    .split(',')
                    .map(|t| match t.trim().parse::<u8>() {
                        Ok(i) if (1..=13).contains(&i) => Ok(i),
                        _ => Err(usage(format!("bad criterion id '{t}' (1 to 13)"))),
                    })
                    .collect::<Res<Vec<u8>>>()?,
                None => Vec::new(),
            };
            let artifacts = match &run {
                Some(dir) => {
                    for f in [vardyn::validation::TRUTH_FILE, vardyn::validation::CALIBRATION_FILE, vardyn::validation::FACTORS_FILE]
                    {
                        require(&dir.join(f))?;
                    }
                    Some(RunArtifacts::load(dir)?)
                }
                None => None,
            };
            let results = run_all(&ValidationOptions { seed, only }, artifacts.as_ref());
            print!("{}", render_table(&results));
            let failed = results.iter().filter(|r| !r.pass).count();
            println!("{} of {} criteria passed", results.len() - failed, results.len());
            if let Some(p) = out {
                write_json(&p, &results)?;
            }
            if strict && failed > 0 {
                return Err(Failure::Compute(anyhow::anyhow!("{failed} criteria failed")));
            }
        }
    }
    Ok(())
}

fn observations(m: &MarketInputs, cfg: &RunConfig) -> Res<ObservationSet> {
    require(&m.futures)?;
    for p in m.vix.iter().chain(&m.holidays) {
        require(p)?;
    }
    let calendar = match &m.holidays {
        Some(p) => Calendar::with_holiday_file(p)?,
        None => Calendar::weekdays(),
    };
    let rows = load_futures(&m.futures)?;
    let vix = m.vix.as_deref().map(load_levels).transpose()?;
    Ok(build_observations(&rows, vix.as_ref(), &calendar, &cfg.ingest())?)
}

fn model_and_curve(calibration: Option<&Path>, xi0: f64) -> Res<(ModelParams, VarianceCurve)> {
    match calibration {
        Some(p) => {
            let record: CalibrationRecord = read_json(p)?;
            let curve = record.result.curves.last().cloned().ok_or_else(|| usage(format!("{} holds no curves", p.display())))?;
            Ok((record.result.params, curve))
        }
        None => {
            if !(xi0 > 0.0) {
                return Err(usage("--xi0 must be positive"));
            }
            Ok((replica::params(), VarianceCurve::flat(xi0, 8.0)))
        }
    }
}

fn coupling_fit(nonlinear: Option<&Path>, params: &ModelParams) -> Res<NonlinearFit> {
    let fit = match nonlinear {
        Some(p) => read_json::<NonlinearReport>(p)?.fit,
        None => replica::fit()?,
    };
    if fit.n() != params.n() {
        return Err(usage(format!("coupling has {} factors, model {}", fit.n(), params.n())));
    }
    Ok(fit)
}

fn factors_csv(f: &FactorSeries) -> String {
    let n = f.n_factors();
    let mut s = String::from("date,dz,xi_spot");
    for a in 0..n {
        let _ = write!(s, ",dw{}", a + 1);
    }
    s.push('\n');
    for t in 0..f.len() {
        let _ = write!(s, "{},{},{}", f.dates[t], f.dz[t], f.xi_spot[t]);
        for a in 0..n {
            let _ = write!(s, ",{}", f.dw[t][a]);
        }
        s.push('\n');
    }
    s
}

#[derive(Serialize)]
struct StatsReport {
    spot: MomentReport,
    factors: Vec<MomentReport>,
    risk_premium: RiskPremium,
    /// Distance correlation of `δZ̄` with each `δW̄^α`.
    distance_correlation: Vec<f64>,
    acf_spot: AcfReport,
    acf_spot_abs: AcfReport,
    acf_factors: Vec<AcfReport>,
}

fn stats_report(f: &FactorSeries) -> Res<StatsReport> {
    let lags: Vec<usize> = (1..=20).collect();
    let n = f.n_factors();
    let abs: Vec<f64> = f.dz_bar.iter().map(|v| v.abs()).collect();
    Ok(StatsReport {
        spot: moments(&f.dz, DT)?,
        factors: (0..n).map(|a| moments(&f.factor(a), DT)).collect::<Result<_, _>>()?,
        risk_premium: risk_premium_stats(f, DT)?,
        distance_correlation: (0..n).map(|a| distance_correlation(&f.dz_bar, &f.factor_bar(a))).collect::<Result<_, _>>()?,
        acf_spot: autocorr_check(&f.dz_bar, &lags)?,
        acf_spot_abs: autocorr_check(&abs, &lags)?,
        acf_factors: (0..n).map(|a| autocorr_check(&f.factor_bar(a), &lags)).collect::<Result<_, _>>()?,
    })
}

#[derive(Serialize)]
struct ModesReport {
    top2_share: f64,
    overlaps: Vec<f64>,
    data: ModeDecomposition,
    model: ModeDecomposition,
}

#[derive(Serialize, Deserialize)]
struct NonlinearReport {
    fit: NonlinearFit,
    /// Exogenous curve vol at the spot.
    sigma_v: f64,
    rho_shocks: Vec<f64>,
    implied_rho: Vec<Vec<f64>>,
    /// `(lag in days, leverage, clustering)`.
    spot_vol: Vec<(usize, f64, f64)>,
    clustering_nonlinear_share: f64,
}

fn nonlinear_report(f: &FactorSeries, params: &ModelParams) -> Res<NonlinearReport> {
    let mut fit = fit_nonlinear(f)?;
    fit.residuals.clear();
    let spot_vol = [1usize, 5, 21, 63]
        .iter()
        .map(|&l| {
            let d = l as f64 * DT;
            Ok((l, leverage_correlation(&fit, params, d)?, volatility_clustering(&fit, params, d)?))
        })
        .collect::<Result<_, vardyn::Error>>()?;
    Ok(NonlinearReport {
        sigma_v: sigma_v(&fit, params, 0.0)?,
        rho_shocks: fit.rho_shocks(),
        implied_rho: fit.implied_rho(),
        spot_vol,
        clustering_nonlinear_share: clustering_nonlinear_share(&fit, params, DT)?,
        fit,
    })
}

#[derive(Serialize)]
struct GarchReport {
    curve_slope: f64,
    spot_stats: SpotStats,
    model: GarchCoefficients,
    direct: GarchCoefficients,
}

#[derive(Serialize)]
struct FutureVariance {
    tau: f64,
    constant: f64,
    adjusted: f64,
    adjusted_direct: f64,
}

#[derive(Serialize)]
struct VvixReport {
    tau1: f64,
    vvix: f64,
    dynamics: Option<VolOfVolState>,
    future_variance: Vec<FutureVariance>,
}
