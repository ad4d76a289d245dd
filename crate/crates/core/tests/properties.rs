//! Property tests of the closed-form invariants.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vardyn::analytics::{skew_stickiness_ratio, smile_impact};
use vardyn::calibration::{day_posterior_mean, DayWorkspace};
use vardyn::curve::VarianceCurve;
use vardyn::kernel::{g, h, l};
use vardyn::market_data::{liquidity_sigma, vix_adjustment_factor, LiquidityConfig};
use vardyn::model::{price_vix_future, vix_future_vol_approx, ModelParams};
use vardyn::spotvol::{fit_nonlinear_series, leverage_correlation, volatility_clustering, NonlinearFit};
use vardyn::stats::{distance_correlation, kl_modes_from_samples};
use vardyn::volofvol::{adjusted_future_variance, adjusted_future_variance_direct, vix_future_total_variance, VolOfVolState};
use vardyn::{DT, VIX_WINDOW};

fn params_with_rho(lo: f64) -> impl Strategy<Value = ModelParams> {
    (2.0..20.0f64, 0.1..1.9f64, 0.2..2.5f64, 0.2..1.5f64, lo..0.9f64).prop_map(|(kf, ratio, tf, ts, rho)| {
        ModelParams::two_factor([kf, kf * ratio / 2.0], [tf, ts], rho, [0.0, 0.0]).unwrap()
    })
}

fn two_factor() -> impl Strategy<Value = ModelParams> {
    params_with_rho(-0.9)
}

/// Monotonicity in maturity needs non-negative factor correlation: with
/// strongly anti-correlated factors the fast factor can cancel the slow one
/// at short tenors and the variance then grows with maturity.
fn positively_correlated() -> impl Strategy<Value = ModelParams> {
    params_with_rho(0.0)
}

/// Positive curves: level, slope and a hump.
fn curve() -> impl Strategy<Value = VarianceCurve> {
    (0.01..0.2f64, 0.01..0.2f64, 0.5..8.0f64, -0.02..0.02f64).prop_map(|(x0, xinf, k, hump)| {
        VarianceCurve::from_fn(move |t| xinf + (x0 - xinf) * (-k * t).exp() + hump * t * (-t).exp() + 0.01, 3.0)
    })
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vix_adjustment_decreases_in_return_count(n in 1.0..40.0f64, dn in 0.1..10.0f64) {
        prop_assert!(vix_adjustment_factor(n + dn).unwrap() < vix_adjustment_factor(n).unwrap());
    }

    #[test]
    fn liquidity_sigma_is_non_increasing_in_volume(v in 0.0..1e6f64, dv in 0.0..1e6f64, scale in 0.1..50.0f64) {
        let cfg = LiquidityConfig { scale, ..LiquidityConfig::default() };
        prop_assert!(liquidity_sigma(v, &cfg) >= liquidity_sigma(v + dv, &cfg));
        prop_assert!(liquidity_sigma(v, &cfg) > 0.0);
    }

    #[test]
    fn kernels_decrease_and_l_is_symmetric(x in 1e-6..1e3f64, r in 1.0001..3.0f64, y in 1e-4..50.0f64, z in 1e-3..5.0f64) {
        prop_assert!(g(x * r) < g(x));
        prop_assert!(h(x * r) < h(x));
        prop_assert!(g(x) <= 1.0 && h(x) <= 0.5);
        prop_assert!(x * g(x) <= 1.0 + 1e-15 && x * x * h(x) >= 0.0);
        let (a, b) = (l(x.min(50.0), y, z), l(y, x.min(50.0), z));
        prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-300));
    }

    #[test]
    fn kernel_weighted_strike_below_plain_strike(c in curve(), t1 in 0.0..1.5f64, w in 0.02..0.5f64, k in 0.01..30.0f64) {
        let plain = c.forward_var_strike(t1, t1 + w).unwrap();
        let weighted = c.kernel_weighted_strike(t1, t1 + w, k).unwrap();
        prop_assert!(weighted <= plain * (1.0 + 1e-12), "{weighted} > {plain}");
    }

    #[test]
    fn future_price_below_strike(c in curve(), p in two_factor(), t1 in 0.0..1.5f64) {
        let v = price_vix_future(&c, &p, t1, t1 + VIX_WINDOW).unwrap();
        prop_assert!(v.price < v.strike);
        let flat = price_vix_future(&c, &p.scaled(0.0), t1, t1 + VIX_WINDOW).unwrap();
        prop_assert_eq!(flat.price, flat.strike);
    }

    #[test]
    fn future_vol_decreases_with_expiry(p in positively_correlated(), t1 in 0.0..2.0f64, dt in 0.01..1.0f64) {
        prop_assert!(vix_future_vol_approx(&p, t1 + dt, VIX_WINDOW) < vix_future_vol_approx(&p, t1, VIX_WINDOW));
    }

    #[test]
    fn total_variance_decreases_with_maturity(p in positively_correlated(), tau in 0.01..2.0f64, dt in 0.01..1.0f64) {
        let short = vix_future_total_variance(&p, 1e-8, VIX_WINDOW);
        let a = vix_future_total_variance(&p, tau, VIX_WINDOW);
        let b = vix_future_total_variance(&p, tau + dt, VIX_WINDOW);
        prop_assert!(b < a);
        prop_assert!(a / short > 0.0 && a / short <= 1.0 + 1e-12);
    }

    #[test]
    fn constant_vol_of_vol_leaves_future_variance_unchanged(p in two_factor(), tau in 0.01..2.0f64, lt in 0.5..2.0f64, k in 0.5..20.0f64) {
        let state = VolOfVolState {
            lambda_t: lt,
            lambda_inf: lt,
            k_lambda: k,
            sigma_lambda: 0.0,
            mu_lambda: 0.0,
            residual_skew: 0.0,
            residual_kurt: 0.0,
            correlations: vec![],
        };
        let base = vix_future_total_variance(&p, tau, VIX_WINDOW);
        for v in [adjusted_future_variance(&p, &state, tau, VIX_WINDOW).unwrap(), adjusted_future_variance_direct(&p, &state, tau, VIX_WINDOW).unwrap()] {
            prop_assert!((v / base - 1.0).abs() < 1e-8, "{v} vs {base}");
        }
    }

    #[test]
    fn spot_vol_functions_vanish_at_long_lags(p in two_factor(), a in -0.1..0.1f64, b in 0.0..0.9f64) {
        let fit = NonlinearFit::from_coefficients(&p, &[a, a / 2.0], &[b, b / 2.0], -0.5, 1.5).unwrap();
        let near = leverage_correlation(&fit, &p, DT).unwrap().abs() + volatility_clustering(&fit, &p, DT).unwrap().abs();
        let far = leverage_correlation(&fit, &p, 200.0).unwrap().abs() + volatility_clustering(&fit, &p, 200.0).unwrap().abs();
        prop_assert!(far <= 1e-12 * near.max(1e-300) || far < 1e-30);
    }

    #[test]
    fn smile_vanishes_without_vol_of_vol(p in two_factor(), c in curve(), months in 1usize..12) {
        let fit = NonlinearFit::from_coefficients(&p, &[0.05, 0.0], &[0.5, 0.8], 0.0, 0.0).unwrap();
        let s = smile_impact(&c, &p, &fit, months as f64 * 21.0 * DT, 1e-4, 0.0).unwrap();
        prop_assert_eq!(s.atm_spread, 0.0);
        prop_assert_eq!(s.skew, 0.0);
    }

    #[test]
    fn one_factor_ssr_decreases_from_two_to_one(k in 0.1..30.0f64, theta in 0.1..3.0f64, b in 0.05..0.95f64) {
        let p = ModelParams::one_factor(k, theta);
        let fit = NonlinearFit::from_coefficients(&p, &[0.0], &[b], 0.0, 0.0).unwrap();
        let mut prev = 2.0 + 1e-12;
        for i in 0..40 {
            let t = 1e-4 * 1.5f64.powi(i);
            let r = skew_stickiness_ratio(&p, &fit, t).unwrap();
            prop_assert!(r < prev && r > 1.0 - 1e-12, "SSR {r} at T {t}");
            prev = r;
        }
    }

    #[test]
    fn posterior_mean_moves_towards_prior_as_noise_grows(
        load in 0.05..5.0f64, theta in 0.2..2.0f64, y in -0.2..0.2f64, mu in -0.3..0.3f64, s in 1e-4..1.0f64, r in 1.01..4.0f64,
    ) {
        let p = ModelParams::new(vec![2.0], vec![theta], vec![vec![1.0]], vec![mu]).unwrap();
        let d = NaiveDate::from_ymd_opt(2020, 1, 2).unwrap();
        let post = |noise: f64| {
            let ws = DayWorkspace::new(d, DMatrix::from_element(1, 1, load), vec![noise], vec![y]).unwrap();
            day_posterior_mean(&ws, &p).unwrap()[0]
        };
        let inversion = y / (load * theta * DT.sqrt());
        let (lo, hi) = (post(s), post(s * r));
        // the posterior sits between the noiseless inversion and the prior mean
        prop_assert!((lo - mu) * (inversion - mu) >= -1e-12);
        prop_assert!((lo - mu).abs() <= (inversion - mu).abs() + 1e-9);
        prop_assert!((hi - mu).abs() <= (lo - mu).abs() + 1e-12);
    }

    #[test]
    fn mode_shares_sum_to_one_with_orthonormal_modes(seed in 0u64..1000, n in 150usize..300) {
        let grid: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.04; grid.len()];
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let f: f64 = rng.sample(StandardNormal);
            for (i, t) in grid.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                x[i] *= (0.05 * f * (-t).exp() + 0.01 * e).exp();
            }
            samples.push(x.clone());
        }
        let d = kl_modes_from_samples(&samples, &grid).unwrap();
        prop_assert!((d.shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let dot: f64 = d.modes[i].iter().zip(&d.modes[j]).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - target).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn distance_correlation_bounds_symmetry_affine_invariance(seed in 0u64..1000, c in -1.0..1.0f64, s in 0.1..10.0f64, sh in -5.0..5.0f64) {
        let x = gaussian(80, seed);
        let y: Vec<f64> = x.iter().zip(gaussian(80, seed + 7)).map(|(a, e)| c * a * a + e).collect();
        let r = distance_correlation(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((r - distance_correlation(&y, &x).unwrap()).abs() < 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| s * v + sh).collect();
        prop_assert!((r - distance_correlation(&xs, &y).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn nonlinear_residuals_are_orthogonal(seed in 0u64..1000, a in -0.3..0.3f64, b in -0.6..0.6f64) {
        let z: Vec<f64> = gaussian(500, seed).iter().map(|v| v - 0.2 * (v * v - 1.0)).collect();
        let e = gaussian(500, seed + 1);
        let w: Vec<f64> = z.iter().zip(&e).map(|(z, e)| a * (z * z - 1.0) - b * z + 0.5 * e).collect();
        let fit = fit_nonlinear_series(&z, &[w]).unwrap();
        let n = z.len() as f64;
        let m = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        let zb: Vec<f64> = z.iter().map(|v| (v - m) / sd).collect();
        let u = &fit.residuals[0];
        let e1: f64 = u.iter().zip(&zb).map(|(u, z)| u * z).sum::<f64>() / n;
        let e2: f64 = u.iter().zip(&zb).map(|(u, z)| u * (z * z - fit.skew * z)).sum::<f64>() / n;
        prop_assert!(e1.abs() < 1e-10 && e2.abs() < 1e-10, "{e1} {e2}");
    }
}
