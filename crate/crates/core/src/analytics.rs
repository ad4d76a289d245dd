//! Pricing consequences of the spot/vol dynamics: return skewness, first
//! order smile impact of vol-of-vol, skew-stickiness ratio and the variance
//! of variance swaps. Double sums run on the daily grid.

use serde::{Deserialize, Serialize};

use crate::curve::VarianceCurve;
use crate::error::{invalid, Error, Result};
use crate::kernel::{g, h, l};
use crate::model::ModelParams;
use crate::spotvol::NonlinearFit;
use crate::DT;

fn check(params: &ModelParams, fit: &NonlinearFit) -> Result<()> {
    if params.n() != fit.n() {
        return Err(invalid(format!("fit has {} factors, params {}", fit.n(), params.n())));
    }
    Ok(())
}

fn steps(t: f64) -> Result<usize> {
    if !(t > 0.0) {
        return Err(invalid("maturity must be positive"));
    }
    Ok(((t / DT).round() as usize).max(1))
}

/// `Σ_u x_u Σ_{v<u} e^{-k(u-v)} y_v` on the daily grid, by recursion.
fn causal_double_sum(x: &[f64], y: &[f64], k: f64) -> f64 {
    let decay = (-k * DT).exp();
    let mut s = 0.0;
    let mut total = 0.0;
    for u in 0..x.len() {
        if u > 0 {
            s = decay * (s + y[u - 1]);
        }
        total += x[u] * s;
    }
    total
}

fn curve_grid(curve: &VarianceCurve, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|i| curve.eval(i as f64 * DT)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skewness {
    /// Double sum on the curve.
    pub general: f64,
    /// Flat-curve closed form `ζ/sqrt(N) + 3 sqrt(T) Σ θ_α c_α h(k_α T)`.
    pub flat: f64,
}

/// Skewness of the cumulative return `Σ r_u` over `[t, T]` at first order in vol-of-vol, with
/// `c_α = E[δZ̄ δW̄^α] = a_α ζ_fit - b_α`. `zeta` is the skewness of the
/// daily spot innovation.
pub fn return_skewness(curve: &VarianceCurve, params: &ModelParams, fit: &NonlinearFit, t: f64, zeta: f64) -> Result<Skewness> {
    check(params, fit)?;
    let n = steps(t)?;
    let xi = curve_grid(curve, n)?;
    let total: f64 = xi.iter().map(|x| x * DT).sum();
    let norm = total.powf(1.5);
    let intrinsic = xi.iter().map(|x| (x * DT).powf(1.5)).sum::<f64>() / norm * zeta;
    let sq: Vec<f64> = xi.iter().map(|x| x.sqrt()).collect();
    let mut general = intrinsic;
    let mut flat = zeta / (n as f64).sqrt();
    let tt = n as f64 * DT;
    for a in 0..params.n() {
        let c = fit.spot_vol_corr(a);
        general += 3.0 * params.theta[a] * c * causal_double_sum(&xi, &sq, params.k[a]) * DT * DT / norm;
        flat += 3.0 * tt.sqrt() * params.theta[a] * c * h(params.k[a] * tt);
    }
    Ok(Skewness { general, flat })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileImpact {
    pub maturity: f64,
    pub lambda_scale: f64,
    /// `σ_VS = sqrt(𝕍_t^{t→T})`.
    pub sigma_vs: f64,
    /// ATM vol shift `σ_ATM - σ_VS`.
    pub atm_spread: f64,
    /// `dσ / d(K/S)` at the money.
    pub skew: f64,
    pub spread_linear: f64,
    pub skew_linear: f64,
    pub spread_nonlinear: f64,
    pub skew_nonlinear: f64,
}

/// First-order vol shift `F'_K(0)/Vega_K` split into the `b` (linear) and
/// `a` (quadratic) contributions, at log-moneyness `m = log(K/S)`.
fn vol_shift(xi: &[f64], params: &ModelParams, fit: &NonlinearFit, m: f64) -> (f64, f64) {
    let n = xi.len();
    let tt = n as f64 * DT;
    let var: f64 = xi.iter().map(|x| x * DT).sum();
    let vs = var / tt;
    let sd = DT.sqrt();
    let (mut lin, mut nl) = (0.0, 0.0);
    // A_v, B_v² - 1 on the grid
    let av: Vec<f64> = xi.iter().map(|x| (x * DT).sqrt() / var * (0.5 * var + m)).collect();
    let b2m1: Vec<f64> = xi.iter().map(|x| -(x * DT) / var).collect();
    let x: Vec<f64> = xi.iter().map(|x| x * DT).collect();
    for a in 0..params.n() {
        let pre = params.theta[a] / 2.0 / (tt * vs.sqrt());
        let ya: Vec<f64> = av.iter().map(|v| -fit.b[a] * v / sd * DT).collect();
        lin += pre * causal_double_sum(&x, &ya, params.k[a]);
        if fit.a[a] != 0.0 {
            let yq: Vec<f64> = av.iter().zip(&b2m1).map(|(v, c)| fit.a[a] * (v * v + c) / sd * DT).collect();
            nl += pre * causal_double_sum(&x, &yq, params.k[a]);
        }
    }
    (lin, nl)
}

/// ATM spread and skew at first order in `λ_scale`, pricing measure
/// (Gaussian innovations, no drift). The skew is the difference quotient
/// between strikes `S` and `S(1 + dk)`.
pub fn smile_impact(
    curve: &VarianceCurve,
    params: &ModelParams,
    fit: &NonlinearFit,
    t: f64,
    dk: f64,
    lambda_scale: f64,
) -> Result<SmileImpact> {
    check(params, fit)?;
    if !(dk != 0.0 && dk.abs() < 0.2 && dk > -1.0) {
        return Err(invalid("strike offset must be small and non-zero"));
    }
    let n = steps(t)?;
    let xi = curve_grid(curve, n)?;
    let tt = n as f64 * DT;
    let sigma_vs = (xi.iter().sum::<f64>() * DT / tt).sqrt();
    let (l0, n0) = vol_shift(&xi, params, fit, 0.0);
    let (l1, n1) = vol_shift(&xi, params, fit, (1.0 + dk).ln());
    let s = lambda_scale;
    Ok(SmileImpact {
        maturity: tt,
        lambda_scale,
        sigma_vs,
        atm_spread: s * (l0 + n0),
        skew: s * ((l1 + n1) - (l0 + n0)) / dk,
        spread_linear: s * l0,
        skew_linear: s * (l1 - l0) / dk,
        spread_nonlinear: s * n0,
        skew_nonlinear: s * (n1 - n0) / dk,
    })
}

/// Flat-curve closed forms `(Spread|lin, Skew|lin, ΔSpread, ΔSkew)`.
pub fn smile_flat(params: &ModelParams, fit: &NonlinearFit, t: f64, sigma_vs: f64, lambda_scale: f64) -> (f64, f64, f64, f64) {
    let (mut bs, mut as_) = (0.0, 0.0);
    for a in 0..params.n() {
        let hh = h(params.k[a] * t);
        bs += params.theta[a] * fit.b[a] * hh;
        as_ += params.theta[a] * fit.a[a] * hh / 2.0 * sigma_vs * DT.sqrt();
    }
    let v2 = sigma_vs * sigma_vs;
    let s = lambda_scale;
    (-s * bs / 4.0 * t * v2, -s * bs / 2.0, s * as_ * (t * v2 / 4.0 - 1.0), s * as_)
}

/// `Σ θ_α b_α g(k_α T) / Σ θ_α b_α h(k_α T)`, with `a` ignored.
pub fn skew_stickiness_ratio(params: &ModelParams, fit: &NonlinearFit, t: f64) -> Result<f64> {
    check(params, fit)?;
    if !(t >= 0.0) {
        return Err(invalid("maturity must be non-negative"));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..params.n() {
        num += params.theta[a] * fit.b[a] * g(params.k[a] * t);
        den += params.theta[a] * fit.b[a] * h(params.k[a] * t);
    }
    if den.abs() < 1e-14 {
        return Err(Error::Numerical("skew-stickiness ratio undefined without linear spot/vol coupling".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSwapDecomposition {
    pub window: f64,
    pub returns: usize,
    pub sampling: f64,
    pub implied: f64,
    pub shocks: f64,
    pub total: f64,
    pub rho_shocks: Vec<f64>,
}

impl VarSwapDecomposition {
    pub fn shock_share(&self) -> f64 {
        self.shocks / self.total
    }
}

/// Expected annualised `(δ𝕍/𝕍)²` of a variance swap over `window`, sampled
/// with `n_returns` returns of kurtosis `fit.kurt` and skew `fit.skew`.
pub fn varswap_total_variance(params: &ModelParams, fit: &NonlinearFit, window: f64, n_returns: usize) -> Result<VarSwapDecomposition> {
    check(params, fit)?;
    if !(window > 0.0) || n_returns == 0 {
        return Err(invalid("window and return count must be positive"));
    }
    let nt = n_returns as f64 * window;
    let kk = 2.0 + fit.kurt;
    let sampling = kk / nt;
    let n = params.n();
    let mut implied = 0.0;
    for a in 0..n {
        for b in 0..n {
            implied += params.omega(a, b) * l(params.k[a], params.k[b], window);
        }
    }
    let rho_shocks = fit.rho_shocks();
    let shocks = 2.0 * (kk / nt).sqrt() * (0..n).map(|a| rho_shocks[a] * params.theta[a] * h(params.k[a] * window)).sum::<f64>();
    Ok(VarSwapDecomposition {
        window,
        returns: n_returns,
        sampling,
        implied,
        shocks,
        total: sampling + implied + shocks,
        rho_shocks,
    })
}

/// Number of daily returns in a window, `round(252 ΔT)`.
pub fn returns_in(window: f64) -> usize {
    ((window / DT).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsRow {
    pub maturity: f64,
    pub atm_spread: f64,
    pub skew: f64,
    pub spread_linear: f64,
    pub skew_linear: f64,
    pub skewness: f64,
    pub ssr: f64,
    pub varswap_sampling: f64,
    pub varswap_implied: f64,
    pub varswap_shocks: f64,
    pub varswap_total: f64,
}

/// Term-structure report at the given maturities.
pub fn term_structure_report(
    curve: &VarianceCurve,
    params: &ModelParams,
    fit: &NonlinearFit,
    maturities: &[f64],
    lambda_scale: f64,
) -> Result<Vec<AnalyticsRow>> {
    let mut pricing = fit.clone();
    pricing.skew = 0.0;
    pricing.kurt = 0.0;
    maturities
        .iter()
        .map(|&t| {
            let sm = smile_impact(curve, params, &pricing, t, 1e-4, lambda_scale)?;
            let sk = return_skewness(curve, &params.scaled(lambda_scale), fit, t, fit.skew)?;
            let vs = varswap_total_variance(params, fit, t, returns_in(t))?;
            Ok(AnalyticsRow {
                maturity: t,
                atm_spread: sm.atm_spread,
                skew: sm.skew,
                spread_linear: sm.spread_linear,
                skew_linear: sm.skew_linear,
                skewness: sk.general,
                ssr: skew_stickiness_ratio(params, fit, t)?,
                varswap_sampling: vs.sampling,
                varswap_implied: vs.implied,
                varswap_shocks: vs.shocks,
                varswap_total: vs.total,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_fit(p: &ModelParams, b: &[f64]) -> NonlinearFit {
        NonlinearFit::from_coefficients(p, &vec![0.0; b.len()], b, 0.0, 0.0).unwrap()
    }

    #[test]
    fn skewness_limits() {
        let curve = VarianceCurve::flat(0.04, 5.0);
        let p0 = ModelParams::paper().scaled(0.0);
        let f = linear_fit(&p0, &[0.5, 0.6]);
        let s = return_skewness(&curve, &p0, &f, 0.25, -0.6).unwrap();
        let n = (0.25 / DT).round();
        assert!((s.general + 0.6 / n.sqrt()).abs() < 1e-12);
        assert!((s.flat + 0.6 / n.sqrt()).abs() < 1e-12);
        let one = ModelParams::one_factor(2.0, 0.8);
        let f = linear_fit(&one, &[0.5]);
        let t = 63.0 * DT;
        let s = return_skewness(&curve, &one, &f, t, 0.0).unwrap();
        assert!((s.flat + 3.0 * t.sqrt() * 0.8 * 0.5 * h(2.0 * t)).abs() < 1e-14);
        // daily sum tends to the integral
        assert!((s.general / s.flat - 1.0).abs() < 0.03, "{s:?}");
    }

    #[test]
    fn linear_identity_between_paths() {
        let curve = VarianceCurve::from_fn(|t| 0.03 + 0.02 * (1.0 - (-2.0 * t).exp()), 3.0);
        let p = ModelParams::paper();
        let f = linear_fit(&p, &[0.55, 0.9]);
        for t in [21.0 * DT, 0.25, 0.5, 1.0] {
            let sm = smile_impact(&curve, &p, &f, t, 1e-5, 1.0).unwrap();
            let sk = return_skewness(&curve, &p, &f, t, 0.0).unwrap();
            let target = sk.general / (6.0 * sm.maturity.sqrt());
            assert!(((sm.skew - target) / target).abs() < 1e-3, "{t} {} {target}", sm.skew);
        }
    }

    #[test]
    fn flat_closed_forms() {
        let v = 0.04;
        let curve = VarianceCurve::flat(v, 3.0);
        let p = ModelParams::paper();
        let f = NonlinearFit::from_coefficients(&p, &[0.2, 0.1], &[0.55, 0.9], 0.0, 0.0).unwrap();
        let t = 0.5;
        let sm = smile_impact(&curve, &p, &f, t, 1e-5, 1.0).unwrap();
        let (sl, kl, ds, dk) = smile_flat(&p, &f, sm.maturity, sm.sigma_vs, 1.0);
        assert!((sm.spread_linear / sl - 1.0).abs() < 0.02, "{} {sl}", sm.spread_linear);
        assert!((sm.skew_linear / kl - 1.0).abs() < 0.02);
        assert!((sm.spread_nonlinear / ds - 1.0).abs() < 0.03, "{} {ds}", sm.spread_nonlinear);
        assert!((sm.skew_nonlinear / dk - 1.0).abs() < 0.03, "{} {dk}", sm.skew_nonlinear);
        assert!((sl - sm.maturity * v / 2.0 * kl).abs() < 1e-15);
        let z = smile_impact(&curve, &p, &f, t, 1e-5, 0.0).unwrap();
        assert_eq!(z.atm_spread, 0.0);
        assert_eq!(z.skew, 0.0);
    }

    #[test]
    fn ssr_limits() {
        let p = ModelParams::paper();
        let f = linear_fit(&p, &[0.55, 0.9]);
        assert!((skew_stickiness_ratio(&p, &f, 1e-9).unwrap() - 2.0).abs() < 1e-3);
        assert!((skew_stickiness_ratio(&p, &f, 1e5).unwrap() - 1.0).abs() < 1e-3);
        let one = ModelParams::one_factor(1.0, 0.8);
        let f1 = linear_fit(&one, &[0.5]);
        let r = skew_stickiness_ratio(&one, &f1, 1.0).unwrap();
        assert!((r - 0.63212 / 0.36788).abs() < 1e-4);
        let mut prev = 2.0 + 1e-9;
        for i in 0..60 {
            let r = skew_stickiness_ratio(&one, &f1, 0.1 * i as f64).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(skew_stickiness_ratio(&one, &linear_fit(&one, &[0.0]), 1.0).is_err());
    }

    #[test]
    fn varswap_terms() {
        let p0 = ModelParams::paper().scaled(0.0);
        let f = linear_fit(&p0, &[0.0, 0.0]);
        let d = varswap_total_variance(&p0, &f, 0.25, 63).unwrap();
        assert_eq!(d.total, 2.0 / (63.0 * 0.25));
        let p = ModelParams::paper();
        let f = linear_fit(&p, &[0.5, 0.5]);
        // asymptotes of the implied and shock kernels
        let small = varswap_total_variance(&p, &f, 1e-5, 1).unwrap();
        let om: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| p.omega(a, b)).sum();
        assert!((small.implied / (om / 3.0) - 1.0).abs() < 0.01);
        let big = varswap_total_variance(&p, &f, 200.0, 50_400).unwrap();
        let asym: f64 = (0..2)
            .flat_map(|a| (0..2).map(move |b| (a, b)))
            .map(|(a, b)| p.omega(a, b) / (p.k[a] * p.k[b] * 200.0 * 200.0))
            .sum();
        assert!((big.implied / asym - 1.0).abs() < 0.01);
        assert!((h(p.k[1] * 200.0) * p.k[1] * 200.0 - 1.0).abs() < 0.01);
    }
}
