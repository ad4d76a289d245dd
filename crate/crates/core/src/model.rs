//! The n-factor lognormal forward-variance model.
//!
//! `dξ_t^u = ξ_t^u Σ_α θ_α e^{-k_α (u-t)} dW_t^α` with `d<W^α, W^β> = ρ_αβ dt`.
//! Factor 0 is the fast factor; speeds are stored in decreasing order.
//!
//! `mu` holds the real-measure mean of the decorrelated, per-day normalised
//! factors `U = TrI^{-1} δW / sqrt(δt)`, i.e. `E[δW] = sqrt(δt) TrI μ`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::curve::VarianceCurve;
use crate::error::{invalid, Error, Result};
use crate::kernel::g;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct ModelParams {
    pub k: Vec<f64>,
    pub theta: Vec<f64>,
    pub rho: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    chol: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    k: Vec<f64>,
    theta: Vec<f64>,
    rho: Vec<Vec<f64>>,
    #[serde(default)]
    mu: Vec<f64>,
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        let n = r.k.len();
        let mu = if r.mu.is_empty() { vec![0.0; n] } else { r.mu };
        ModelParams::new(r.k, r.theta, r.rho, mu)
    }
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        Self { k: p.k, theta: p.theta, rho: p.rho, mu: p.mu }
    }
}

impl ModelParams {
    pub fn new(k: Vec<f64>, theta: Vec<f64>, rho: Vec<Vec<f64>>, mu: Vec<f64>) -> Result<Self> {
        let n = k.len();
        if n == 0 || theta.len() != n || rho.len() != n || mu.len() != n || rho.iter().any(|r| r.len() != n) {
            return Err(invalid("inconsistent parameter dimensions"));
        }
        if k.iter().any(|v| !(*v > 0.0)) {
            return Err(invalid("decay speeds must be positive"));
        }
        if k.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("decay speeds must be strictly decreasing (factor 0 is the fast one)"));
        }
        if theta.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("factor vols must be non-negative"));
        }
        for a in 0..n {
            if (rho[a][a] - 1.0).abs() > 1e-12 {
                return Err(invalid("correlation diagonal must be one"));
            }
            for b in 0..n {
                if (rho[a][b] - rho[b][a]).abs() > 1e-12 || rho[a][b].abs() > 1.0 + 1e-12 {
                    return Err(invalid("correlation matrix must be symmetric with entries in [-1, 1]"));
                }
            }
        }
        let chol = correlation_cholesky(&rho)?;
        Ok(Self { k, theta, rho, mu, chol })
    }

    /// Two-factor parameters with a single correlation.
    pub fn two_factor(k: [f64; 2], theta: [f64; 2], rho: f64, mu: [f64; 2]) -> Result<Self> {
        Self::new(k.to_vec(), theta.to_vec(), vec![vec![1.0, rho], vec![rho, 1.0]], mu.to_vec())
    }

    pub fn one_factor(k: f64, theta: f64) -> Self {
        Self::new(vec![k], vec![theta], vec![vec![1.0]], vec![0.0]).expect("valid one-factor parameters")
    }

    /// The published two-factor estimates.
    pub fn paper() -> Self {
        Self::two_factor([10.25, 1.05], [1.80, 0.92], 0.51, [-0.075, -0.004]).expect("valid")
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    /// `Ω_αβ = θ_α θ_β ρ_αβ`.
    #[inline]
    pub fn omega(&self, a: usize, b: usize) -> f64 {
        self.theta[a] * self.theta[b] * self.rho[a][b]
    }

    /// Lower Cholesky factor `TrI` of the correlation matrix.
    pub fn tri(&self) -> &[Vec<f64>] {
        &self.chol
    }

    /// `sqrt(Ω) = Θ TrI`.
    pub fn sqrt_omega(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.theta[i] * self.chol[i][j])
    }

    /// Vol-of-vol scaled by `λ`: `θ -> λ θ`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut p = self.clone();
        p.theta.iter_mut().for_each(|t| *t *= lambda);
        p
    }

    pub fn with_mu(&self, mu: Vec<f64>) -> Self {
        let mut p = self.clone();
        p.mu = mu;
        p
    }

    pub fn risk_neutral(&self) -> Self {
        self.with_mu(vec![0.0; self.n()])
    }

    /// Per-day mean of the normalised factor increments `δW/sqrt(δt)`: `TrI μ`.
    pub fn factor_daily_mean(&self) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|a| (0..n).map(|b| self.chol[a][b] * self.mu[b]).sum()).collect()
    }

    /// Annualised drift of each `W^α`: `TrI μ / sqrt(δt)`.
    pub fn factor_drift_annualized(&self) -> Vec<f64> {
        self.factor_daily_mean().iter().map(|m| m / crate::DT.sqrt()).collect()
    }
}

/// Cholesky factor of a correlation matrix, flooring eigenvalues at 1e-10
/// when the matrix is not numerically positive definite.
pub fn correlation_cholesky(rho: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = rho.len();
    let m = DMatrix::from_fn(n, n, |i, j| rho[i][j]);
    let fixed = match m.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = SymmetricEigen::new(m);
            let vals = eig.eigenvalues.map(|v| v.max(1e-10));
            let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
            let d: Vec<f64> = (0..n).map(|i| rebuilt[(i, i)].sqrt()).collect();
            let normed = DMatrix::from_fn(n, n, |i, j| rebuilt[(i, j)] / (d[i] * d[j]));
            normed.cholesky().ok_or_else(|| Error::Numerical("correlation matrix not repairable".into()))?.l()
        }
    };
    Ok((0..n).map(|i| (0..n).map(|j| fixed[(i, j)]).collect()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixFuturePrice {
    pub strike: f64,
    pub convexity: f64,
    pub price: f64,
}

/// Kernel-weighted curve means `(1/ΔT) ∫_{T1}^{T2} ξ e^{-k_α (u - T1)} du`.
fn shifted_kernel_means(curve: &VarianceCurve, params: &ModelParams, t1: f64, t2: f64) -> Result<Vec<f64>> {
    params.k.iter().map(|&k| Ok(curve.weighted_integral(t1, t2, k, t1)? / (t2 - t1))).collect()
}

/// VIX future with the second-order convexity correction. The time integral
/// `∫_t^{T1} e^{-(k_α+k_β)(T1-v)} dv` is taken in closed form, which is what
/// the kernel-weighted means in the correction reduce to for exponential
/// kernels.
pub fn price_vix_future(curve: &VarianceCurve, params: &ModelParams, t1: f64, t2: f64) -> Result<VixFuturePrice> {
    if t1 < 0.0 || !(t2 > t1) {
        return Err(invalid(format!("bad future window [{t1}, {t2}]")));
    }
    let strike = curve.forward_var_strike(t1, t2)?;
    let m = shifted_kernel_means(curve, params, t1, t2)?;
    price_from_means(params, t1, strike, &m)
}

/// Price from the variance strike and the kernel-weighted window means
/// `(1/ΔT) ∫ ξ e^{-k_α (u - T1)} du`.
pub fn price_from_means(params: &ModelParams, t1: f64, strike: f64, means: &[f64]) -> Result<VixFuturePrice> {
    let k2 = strike * strike;
    let n = params.n();
    let mut cc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            cc += params.omega(a, b) / 8.0 * t1 * g(ks * t1) * means[a] * means[b];
        }
    }
    cc /= k2 * k2;
    if cc >= 1.0 {
        return Err(Error::Numerical(format!("convexity correction {cc} >= 1: vol-of-vol too large for the expansion")));
    }
    Ok(VixFuturePrice { strike, convexity: cc, price: strike * (1.0 - cc) })
}

/// Convexity correction written with the kernel weights anchored at `t`
/// (`e^{-k(u-t)}`) and the growth factor `(e^{(k_α+k_β)(T1-t)} - 1)/(k_α+k_β)`.
/// Algebraically identical to [`price_vix_future`]; kept as an independent path.
pub fn convexity_anchored(curve: &VarianceCurve, params: &ModelParams, t1: f64, t2: f64) -> Result<f64> {
    let dt = t2 - t1;
    let k2 = curve.forward_var_strike(t1, t2)?.powi(2);
    let m: Vec<f64> =
        params.k.iter().map(|&k| Ok(curve.weighted_integral(t1, t2, k, 0.0)? / dt)).collect::<Result<_>>()?;
    let n = params.n();
    let mut cc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            cc += params.omega(a, b) / 8.0 * (ks * t1).exp_m1() / ks * m[a] * m[b];
        }
    }
    Ok(cc / (k2 * k2))
}

/// Flat-curve convexity approximation
/// `(1/8) Σ Ω_αβ g(k_α ΔT) g(k_β ΔT) (1 - e^{-(k_α+k_β)(T1-t)})/(k_α+k_β)`.
pub fn approx_convexity(params: &ModelParams, tau1: f64, window: f64) -> f64 {
    let n = params.n();
    let mut cc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            cc += params.omega(a, b) * g(params.k[a] * window) * g(params.k[b] * window) * tau1 * g(ks * tau1);
        }
    }
    cc / 8.0
}

/// Per-factor loadings `(θ_α/2)(𝕂^{T1,α}/𝒱^{T1})^2` of `dV/V` on `dW^α`.
pub fn future_dynamics_loadings(curve: &VarianceCurve, params: &ModelParams, t1: f64, t2: f64) -> Result<Vec<f64>> {
    let v = price_vix_future(curve, params, t1, t2)?.price;
    params
        .k
        .iter()
        .zip(&params.theta)
        .map(|(&k, &th)| {
            let kk = curve.kernel_weighted_strike(t1, t2, k)?;
            Ok(0.5 * th * (kk / v).powi(2))
        })
        .collect()
}

/// `ν^u = sqrt(Σ Ω_αβ ω^α ω^β)` at tenor `tau = u - t`.
pub fn instantaneous_var_vol(params: &ModelParams, tau: f64) -> f64 {
    let n = params.n();
    let w: Vec<f64> = params.k.iter().map(|k| (-k * tau).exp()).collect();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += params.omega(a, b) * w[a] * w[b];
        }
    }
    s.max(0.0).sqrt()
}

/// Flat-curve VIX future vol `½ sqrt(Σ Ω g_α g_β e^{-(k_α+k_β)(T1-t)})`.
pub fn vix_future_vol_approx(params: &ModelParams, tau1: f64, window: f64) -> f64 {
    let n = params.n();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            let ks = params.k[a] + params.k[b];
            s += params.omega(a, b) * g(params.k[a] * window) * g(params.k[b] * window) * (-ks * tau1).exp();
        }
    }
    0.5 * s.max(0.0).sqrt()
}

/// Vol implied by a loading vector: `sqrt(Σ ρ_αβ L_α L_β)`.
pub fn loading_vol(params: &ModelParams, loadings: &[f64]) -> f64 {
    let n = params.n();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += params.rho[a][b] * loadings[a] * loadings[b];
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VIX_WINDOW;

    #[test]
    fn nu_at_zero_tenor() {
        let p = ModelParams::paper();
        let expected = (1.8f64.powi(2) + 0.92f64.powi(2) + 2.0 * 0.51 * 1.8 * 0.92).sqrt();
        assert!((instantaneous_var_vol(&p, 0.0) - expected).abs() < 1e-14);
        assert!((expected - 2.4033).abs() < 1e-4);
        let one = ModelParams::one_factor(3.0, 0.7);
        assert!((instantaneous_var_vol(&one, 0.4) - 0.7 * (-1.2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_vol_of_vol_prices_at_strike() {
        let c = VarianceCurve::flat(0.04, 1.0);
        let p = ModelParams::paper().scaled(0.0);
        let v = price_vix_future(&c, &p, 0.1, 0.1 + VIX_WINDOW).unwrap();
        assert_eq!(v.convexity, 0.0);
        assert_eq!(v.price, v.strike);
    }

    #[test]
    fn exact_and_approximate_convexity_agree_on_flat_curve() {
        let c = VarianceCurve::flat(0.04, 2.0);
        let p = ModelParams::paper();
        for &t1 in &[0.0, 1.0 / 12.0, 0.25, 0.5, 1.0] {
            let exact = price_vix_future(&c, &p, t1, t1 + VIX_WINDOW).unwrap().convexity;
            let anchored = convexity_anchored(&c, &p, t1, t1 + VIX_WINDOW).unwrap();
            let approx = approx_convexity(&p, t1, VIX_WINDOW);
            assert!((exact - approx).abs() <= 1e-12 + 1e-10 * approx, "{t1}: {exact} {approx}");
            assert!((exact - anchored).abs() <= 1e-12 + 1e-10 * approx);
        }
        let c = approx_convexity(&p, 0.3, VIX_WINDOW);
        assert!((approx_convexity(&p.scaled(0.5), 0.3, VIX_WINDOW) - 0.25 * c).abs() < 1e-15);
    }

    #[test]
    fn loadings_match_vol_approx_without_convexity() {
        let c = VarianceCurve::flat(0.04, 2.0);
        let p = ModelParams::paper();
        for &t1 in &[0.0, 0.1, 0.4] {
            let t2 = t1 + VIX_WINDOW;
            let strike = c.forward_var_strike(t1, t2).unwrap();
            let loads: Vec<f64> = p
                .k
                .iter()
                .zip(&p.theta)
                .map(|(&k, &th)| 0.5 * th * (c.kernel_weighted_strike(t1, t2, k).unwrap() / strike).powi(2))
                .collect();
            assert!((loading_vol(&p, &loads) - vix_future_vol_approx(&p, t1, VIX_WINDOW)).abs() < 1e-12);
        }
    }

    #[test]
    fn params_json_round_trip() {
        let p = ModelParams::paper();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"theta\""));
        let back: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<ModelParams>(r#"{"k":[1],"theta":[1],"rho":[[1]],"extra":1}"#).is_err());
    }

    #[test]
    fn drift_mapping() {
        let p = ModelParams::paper();
        let d = p.factor_drift_annualized();
        assert!((d[0] - (-0.075 / crate::DT.sqrt())).abs() < 1e-12);
        let s = 0.51 * -0.075 + (1.0f64 - 0.51 * 0.51).sqrt() * -0.004;
        assert!((d[1] - s / crate::DT.sqrt()).abs() < 1e-12);
    }
}
