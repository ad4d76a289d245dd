//! Vol-of-vol: VIX future variance term structure, model VVIX, and the
//! mean-reverting vol-of-vol ratio `λ`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::g;
use crate::model::ModelParams;
use crate::quad::adaptive_simpson;

fn omega_g(params: &ModelParams, a: usize, b: usize, window: f64) -> f64 {
    params.omega(a, b) * g(params.k[a] * window) * g(params.k[b] * window)
}

/// Expected average of `(dV/V)²` up to expiry on a flat curve:
/// `¼ Σ Ω^g_αβ g((k_α+k_β)(T_i-t))`.
pub fn vix_future_total_variance(params: &ModelParams, tau: f64, window: f64) -> f64 {
    let n = params.n();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += omega_g(params, a, b, window) * g((params.k[a] + params.k[b]) * tau);
        }
    }
    0.25 * s
}

/// Model VVIX from the first two expiries at tenors `tau1 < tau2`.
pub fn model_vvix(params: &ModelParams, tau1: f64, tau2: f64) -> Result<f64> {
    if !(tau2 > tau1) || tau1 < 0.0 {
        return Err(invalid("model VVIX needs 0 <= tau1 < tau2"));
    }
    let dt = tau2 - tau1;
    let n = params.n();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            s += omega_g(params, a, b, dt) / 4.0 * (2.0 * g(ks * tau2) - (-ks * tau1).exp() * g(ks * dt));
        }
    }
    if s < 0.0 {
        return Err(Error::Numerical(format!("model VVIX variance {s} is negative")));
    }
    Ok(s.sqrt())
}

/// Fitted log-OU dynamics of `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolOfVolState {
    /// Last observed `λ_t`.
    pub lambda_t: f64,
    pub lambda_inf: f64,
    /// Mean-reversion speed, 1/years. Infinite for a constant series.
    pub k_lambda: f64,
    /// Annualised vol of `log λ`.
    pub sigma_lambda: f64,
    /// Annualised mean of `δ log λ`.
    pub mu_lambda: f64,
    pub residual_skew: f64,
    pub residual_kurt: f64,
    /// Correlation of `δ log λ` with each supplied series.
    pub correlations: Vec<(String, f64)>,
}

impl VolOfVolState {
    pub fn half_life(&self) -> f64 {
        std::f64::consts::LN_2 / self.k_lambda
    }
}

fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    }
}

/// Conditional maximum likelihood of the AR(1) in `log λ` (least squares of
/// `log λ_{t+1}` on `log λ_t`), mapped to the continuous parameters.
/// `others` are series aligned with the increments `log λ_{t+1} - log λ_t`.
pub fn fit_lambda_process(lambda: &[f64], dt: f64, others: &[(&str, &[f64])]) -> Result<VolOfVolState> {
    if lambda.len() < 250 {
        return Err(invalid("λ fit needs at least 250 points"));
    }
    if lambda.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Data("λ series must be positive".into()));
    }
    let x: Vec<f64> = lambda.iter().map(|v| v.ln()).collect();
    let n = x.len() - 1;
    let d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mu_lambda = d.iter().sum::<f64>() / n as f64 / dt;
    let correlations = others
        .iter()
        .map(|(name, s)| {
            if s.len() != n {
                return Err(invalid(format!("series {name} has {} points, expected {n}", s.len())));
            }
            Ok((name.to_string(), corr(&d, s)))
        })
        .collect::<Result<_>>()?;
    let (xs, ys) = (&x[..n], &x[1..]);
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|v| (v - mx).powi(2)).sum();
    let lambda_t = *lambda.last().expect("non-empty");
    if sxx <= 1e-28 * n as f64 {
        return Ok(VolOfVolState {
            lambda_t,
            lambda_inf: mx.exp(),
            k_lambda: f64::INFINITY,
            sigma_lambda: 0.0,
            mu_lambda,
            residual_skew: 0.0,
            residual_kurt: 0.0,
            correlations,
        });
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let phi = sxy / sxx;
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Numerical(format!("AR(1) coefficient {phi} outside (0, 1): no mean reversion")));
    }
    let c = my - phi * mx;
    let resid: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| b - c - phi * a).collect();
    let s2 = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let k = -phi.ln() / dt;
    let sigma = (s2 * 2.0 * k / (1.0 - phi * phi)).sqrt();
    let sd = s2.sqrt();
    let m3 = resid.iter().map(|r| (r / sd).powi(3)).sum::<f64>() / n as f64;
    let m4 = resid.iter().map(|r| (r / sd).powi(4)).sum::<f64>() / n as f64;
    Ok(VolOfVolState {
        lambda_t,
        lambda_inf: (c / (1.0 - phi)).exp(),
        k_lambda: k,
        sigma_lambda: sigma,
        mu_lambda,
        residual_skew: m3,
        residual_kurt: m4 - 3.0,
        correlations,
    })
}

/// `(E_t[λ_u], E_t[log λ_u])` at horizon `tau = u - t`, the level in the
/// second-order form `λ_∞ (λ_t/λ_∞)^{e^{-kτ}} e^{σ²τ/2}`.
pub fn lambda_expectation(state: &VolOfVolState, tau: f64) -> (f64, f64) {
    let e = if state.k_lambda.is_infinite() { if tau > 0.0 { 0.0 } else { 1.0 } } else { (-state.k_lambda * tau).exp() };
    let ratio = state.lambda_t / state.lambda_inf;
    let level = state.lambda_inf * ratio.powf(e) * (0.5 * state.sigma_lambda * state.sigma_lambda * tau).exp();
    let log = state.lambda_inf.ln() + ratio.ln() * e;
    (level, log)
}

/// Exact `E_t[λ_u]` of the log-OU.
pub fn lambda_expectation_exact(state: &VolOfVolState, tau: f64) -> f64 {
    let (_, m) = lambda_expectation(state, tau);
    let v = if state.k_lambda.is_infinite() {
        0.0
    } else {
        state.sigma_lambda.powi(2) * (-(-2.0 * state.k_lambda * tau).exp_m1()) / (2.0 * state.k_lambda)
    };
    (m + 0.5 * v).exp()
}

fn adjusted_with<F: Fn(f64) -> f64>(params: &ModelParams, state: &VolOfVolState, tau: f64, window: f64, weight: F) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(invalid("adjusted variance needs T_i > t"));
    }
    let n = params.n();
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            // e^{-ks T} e^{ks u} folded into e^{-ks (T-u)} to stay finite
            let f = |u: f64| weight(u) / state.lambda_inf * (-ks * (tau - u)).exp();
            let scale = omega_g(params, a, b, window) / (4.0 * tau);
            // the integral is at most min(tau, 1/ks)
            let val = adaptive_simpson(&f, 0.0, tau, 1e-12 * tau.min(1.0 / ks));
            if !val.is_finite() {
                return Err(Error::Numerical("adjusted variance quadrature failed".into()));
            }
            total += scale * val;
        }
    }
    Ok(total)
}

/// Total variance of a VIX future under stochastic vol-of-vol, as printed:
/// the integrand carries `λ_t^u e^{σ_λ² (u-t)/2}`.
pub fn adjusted_future_variance(params: &ModelParams, state: &VolOfVolState, tau: f64, window: f64) -> Result<f64> {
    let s2 = state.sigma_lambda * state.sigma_lambda;
    adjusted_with(params, state, tau, window, |u| lambda_expectation(state, u).0 * (0.5 * s2 * u).exp())
}

/// Same quantity with the exact log-OU expectation `E_t[λ_u]` and no extra
/// growth factor; the Monte Carlo simulator targets this one.
pub fn adjusted_future_variance_direct(params: &ModelParams, state: &VolOfVolState, tau: f64, window: f64) -> Result<f64> {
    adjusted_with(params, state, tau, window, |u| lambda_expectation_exact(state, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VIX_WINDOW;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn state(lt: f64, li: f64, k: f64, s: f64) -> VolOfVolState {
        VolOfVolState {
            lambda_t: lt,
            lambda_inf: li,
            k_lambda: k,
            sigma_lambda: s,
            mu_lambda: 0.0,
            residual_skew: 0.0,
            residual_kurt: 0.0,
            correlations: vec![],
        }
    }

    #[test]
    fn total_variance_limits() {
        let p = ModelParams::paper();
        let v0 = vix_future_total_variance(&p, 0.0, VIX_WINDOW);
        let vol = crate::model::vix_future_vol_approx(&p, 0.0, VIX_WINDOW);
        assert!((v0 - vol * vol).abs() < 1e-14);
        let one = ModelParams::one_factor(4.0, 0.9);
        let v = vix_future_total_variance(&one, 0.3, VIX_WINDOW);
        assert!((v - 0.81 * g(4.0 * VIX_WINDOW).powi(2) / 4.0 * g(2.4)).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let v = vix_future_total_variance(&p, i as f64 * 0.05, VIX_WINDOW);
            assert!(v < prev && v / v0 <= 1.0);
            prev = v;
        }
    }

    #[test]
    fn vvix_level() {
        let p = ModelParams::paper();
        let v = model_vvix(&p, 10.0 / 252.0, 10.0 / 252.0 + VIX_WINDOW).unwrap();
        assert!((v - 0.7445).abs() < 5e-4, "{v}");
        assert_eq!(model_vvix(&p.scaled(0.0), 0.02, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn adjusted_reduces_and_steepens() {
        let p = ModelParams::paper();
        let flat = state(1.26, 1.26, 16.0, 0.0);
        for tau in [0.02, 0.1, 0.3, 0.6] {
            let a = adjusted_future_variance(&p, &flat, tau, VIX_WINDOW).unwrap();
            let b = vix_future_total_variance(&p, tau, VIX_WINDOW);
            assert!(((a - b) / b).abs() < 1e-8, "{a} {b}");
            let d = adjusted_future_variance_direct(&p, &flat, tau, VIX_WINDOW).unwrap();
            assert!(((d - b) / b).abs() < 1e-8);
        }
        let hi = state(2.5, 1.26, 16.0, 0.0);
        let r_short = adjusted_future_variance(&p, &hi, 0.02, VIX_WINDOW).unwrap() / vix_future_total_variance(&p, 0.02, VIX_WINDOW);
        let r_long = adjusted_future_variance(&p, &hi, 0.6, VIX_WINDOW).unwrap() / vix_future_total_variance(&p, 0.6, VIX_WINDOW);
        assert!(r_short > r_long && r_long > 1.0);
        // σ_λ -> 0 uniformly
        for s in [0.1, 0.01, 0.001] {
            let st = state(1.26, 1.26, 16.0, s);
            let r = adjusted_future_variance(&p, &st, 0.5, VIX_WINDOW).unwrap() / vix_future_total_variance(&p, 0.5, VIX_WINDOW);
            assert!((r - 1.0).abs() < 2.0 * s * s, "{s} {r}");
        }
    }

    #[test]
    fn expectation_limits() {
        let st = state(2.0, 1.26, 16.0, 1.52);
        let (lv, lg) = lambda_expectation(&st, 0.0);
        assert!((lv - 2.0).abs() < 1e-15 && (lg - 2f64.ln()).abs() < 1e-15);
        let (_, lg) = lambda_expectation(&st, 10.0);
        assert!((lg - 1.26f64.ln()).abs() < 1e-12);
    }

    fn simulate_ou(li: f64, k: f64, s: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = crate::DT;
        let e = (-k * dt).exp();
        let sd = s * ((1.0 - e * e) / (2.0 * k)).sqrt();
        let m = li.ln();
        let mut x = m;
        (0..n)
            .map(|_| {
                let v = x.exp();
                x = m + (x - m) * e + sd * rng.sample::<f64, _>(StandardNormal);
                v
            })
            .collect()
    }

    #[test]
    fn ou_recovery() {
        let s = simulate_ou(1.26, 16.0, 1.52, 1500, 77);
        let st = fit_lambda_process(&s, crate::DT, &[]).unwrap();
        assert!((st.k_lambda - 16.0).abs() < 0.3 * 16.0, "{st:?}");
        assert!((st.lambda_inf - 1.26).abs() < 0.1 * 1.26, "{st:?}");
        assert!((st.sigma_lambda - 1.52).abs() < 0.1 * 1.52, "{st:?}");
        assert!(st.half_life() * 252.0 < 21.0);
        let c = fit_lambda_process(&vec![1.3; 300], crate::DT, &[]).unwrap();
        assert_eq!(c.sigma_lambda, 0.0);
        assert!((c.lambda_inf - 1.3).abs() < 1e-12);
        assert!(fit_lambda_process(&[0.0; 300], crate::DT, &[]).is_err());
    }

    #[test]
    fn expectation_matches_simulation() {
        let st = state(2.0, 1.26, 16.0, 1.52);
        let tau = 0.05;
        let steps = (tau / crate::DT).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = (-16.0 * crate::DT).exp();
        let sd = 1.52 * ((1.0 - e * e) / 32.0f64).sqrt();
        let m = 1.26f64.ln();
        let n = 200_000;
        let mut acc = crate::montecarlo::RunningStats::default();
        for _ in 0..n {
            let mut x = 2f64.ln();
            for _ in 0..steps {
                x = m + (x - m) * e + sd * rng.sample::<f64, _>(StandardNormal);
            }
            acc.push(x.exp());
        }
        let exact = lambda_expectation_exact(&st, steps as f64 * crate::DT);
        assert!((acc.mean - exact).abs() < 3.0 * acc.se(), "{} {} {}", acc.mean, exact, acc.se());
    }
}
