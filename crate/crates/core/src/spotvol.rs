//! Quadratic spot/vol coupling `δW̄^α = a_α(δZ̄²-1) - b_α δZ̄ + γ_α U^α`, the
//! exogenous vol `σ_V`, leverage and clustering functions, and the map to
//! asymmetric GARCH coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibration::FactorSeries;
use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;
use crate::montecarlo::Coupling;
use crate::DT;

/// Moments of the spot factor: annualised drift and vol of `Z`, skewness and
/// excess kurtosis of `δZ̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotStats {
    pub mu_z: f64,
    pub sigma_z: f64,
    pub skew: f64,
    pub kurt: f64,
}

impl SpotStats {
    /// Published sample statistics of the spot factor.
    pub fn paper() -> Self {
        Self { mu_z: 0.33, sigma_z: 0.796, skew: -0.57, kurt: 1.59 }
    }

    pub fn gaussian() -> Self {
        Self { mu_z: 0.0, sigma_z: 1.0, skew: 0.0, kurt: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearFit {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Standard errors of `a`, `b`, `γ` (empty for fits not estimated from data).
    pub se_a: Vec<f64>,
    pub se_b: Vec<f64>,
    pub se_gamma: Vec<f64>,
    /// Skewness and excess kurtosis of `δZ̄`.
    pub skew: f64,
    pub kurt: f64,
    /// `E[U^α U^β]`.
    pub u_corr: Vec<Vec<f64>>,
    /// Residuals `U^α`, per factor (empty for fits not estimated from data).
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub residuals: Vec<Vec<f64>>,
    pub samples: usize,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

impl NonlinearFit {
    /// Fit from known coupling coefficients, the residual correlation chosen
    /// so the factors keep correlation `params.rho`.
    pub fn from_coefficients(params: &ModelParams, a: &[f64], b: &[f64], skew: f64, kurt: f64) -> Result<Self> {
        let c = Coupling::consistent(params, a, b, skew, kurt)?;
        Ok(Self {
            a: c.a,
            b: c.b,
            gamma: c.gamma,
            se_a: vec![],
            se_b: vec![],
            se_gamma: vec![],
            skew,
            kurt,
            u_corr: c.u_corr,
            residuals: vec![],
            samples: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    /// Simulation coupling with the fitted coefficients.
    pub fn coupling(&self) -> Coupling {
        Coupling { a: self.a.clone(), b: self.b.clone(), gamma: self.gamma.clone(), u_corr: self.u_corr.clone() }
    }

    /// `E[δZ̄ δW̄^α] = a_α ζ - b_α`.
    pub fn spot_vol_corr(&self, alpha: usize) -> f64 {
        self.a[alpha] * self.skew - self.b[alpha]
    }

    /// `E[δZ̄² δW̄^α] = a_α (2+κ) - b_α ζ`.
    pub fn square_vol_corr(&self, alpha: usize) -> f64 {
        self.a[alpha] * (2.0 + self.kurt) - self.b[alpha] * self.skew
    }

    /// Factor correlation implied by the fit:
    /// `γ_α γ_β E[U^α U^β] + (2+κ) a_α a_β + b_α b_β - ζ(a_α b_β + a_β b_α)`.
    pub fn implied_rho(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        self.gamma[i] * self.gamma[j] * self.u_corr[i][j]
                            + (2.0 + self.kurt) * self.a[i] * self.a[j]
                            + self.b[i] * self.b[j]
                            - self.skew * (self.a[i] * self.b[j] + self.a[j] * self.b[i])
                    })
                    .collect()
            })
            .collect()
    }

    /// `ρ_shocks^α = a_α sqrt(κ+2) - b_α ζ / sqrt(κ+2)`.
    pub fn rho_shocks(&self) -> Vec<f64> {
        let s = (2.0 + self.kurt).sqrt();
        self.a.iter().zip(&self.b).map(|(a, b)| a * s - b * self.skew / s).collect()
    }
}

fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    x.clone().svd(true, true).solve(y, 1e-14).map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Population-standardised copy of `x`, with its skewness and excess kurtosis.
fn standardize_population(x: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let m = mean(x);
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
    if !(v > 0.0) {
        return Err(Error::Data("spot factor has zero variance".into()));
    }
    let s = v.sqrt();
    let z: Vec<f64> = x.iter().map(|v| (v - m) / s).collect();
    let skew = mean(&z.iter().map(|v| v.powi(3)).collect::<Vec<_>>());
    let kurt = mean(&z.iter().map(|v| v.powi(4)).collect::<Vec<_>>()) - 3.0;
    Ok((z, skew, kurt))
}

/// Fits the quadratic coupling of each factor series `w[α]` on `z`. `z` is
/// re-standardised with population moments so that the moment formulas and
/// least squares on `(z²-1, z)` solve the same normal equations; `w` is only
/// centred, so `γ² = E[w²] - a²(2+κ) - b² + 2abζ`.
pub fn fit_nonlinear_series(z: &[f64], w: &[Vec<f64>]) -> Result<NonlinearFit> {
    let n_obs = z.len();
    if n_obs < 30 {
        return Err(invalid("non-linear fit needs at least 30 samples"));
    }
    if w.iter().any(|s| s.len() != n_obs) || w.is_empty() {
        return Err(invalid("factor series lengths differ from the spot series"));
    }
    let (z, skew, kurt) = standardize_population(z)?;
    let det = 2.0 + kurt - skew * skew;
    if !(det > 1e-12) {
        return Err(Error::Numerical(format!("2 + κ - ζ² = {det} is not positive")));
    }
    let nf = w.len();
    let (mut a, mut b, mut gamma) = (vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]);
    let (mut se_a, mut se_b, mut se_g) = (vec![0.0; nf], vec![0.0; nf], vec![0.0; nf]);
    let mut residuals = Vec::with_capacity(nf);
    let x = DMatrix::from_fn(n_obs, 2, |i, j| if j == 0 { z[i] * z[i] - 1.0 } else { z[i] });
    for (al, series) in w.iter().enumerate() {
        let mw = mean(series);
        let wc: Vec<f64> = series.iter().map(|v| v - mw).collect();
        let e_wz2 = mean(&wc.iter().zip(&z).map(|(w, z)| w * z * z).collect::<Vec<_>>());
        let e_wz = mean(&wc.iter().zip(&z).map(|(w, z)| w * z).collect::<Vec<_>>());
        let e_ww = mean(&wc.iter().map(|w| w * w).collect::<Vec<_>>());
        a[al] = (e_wz2 - skew * e_wz) / det;
        b[al] = (skew * e_wz2 - (2.0 + kurt) * e_wz) / det;
        let g2 = e_ww - a[al] * a[al] * (2.0 + kurt) - b[al] * b[al] + 2.0 * a[al] * b[al] * skew;
        if g2 < 0.0 {
            return Err(Error::Numerical(format!("γ² = {g2} < 0 for factor {al}: moment formulas inconsistent")));
        }
        gamma[al] = g2.sqrt();

        // independent least-squares solve of the same regression
        let coef = lstsq(&x, &DVector::from_column_slice(&wc))?;
        let (a_ls, b_ls) = (coef[0], -coef[1]);
        let tol = 1e-10 * (1.0 + a[al].abs() + b[al].abs());
        if (a_ls - a[al]).abs() > tol || (b_ls - b[al]).abs() > tol {
            return Err(Error::Numerical(format!(
                "moment and least-squares fits disagree: ({}, {}) vs ({a_ls}, {b_ls})",
                a[al], b[al]
            )));
        }
        let resid: Vec<f64> = wc.iter().zip(&z).map(|(w, z)| w - a[al] * (z * z - 1.0) + b[al] * z).collect();
        let s2 = resid.iter().map(|r| r * r).sum::<f64>() / (n_obs as f64 - 2.0);
        let inv = (x.transpose() * &x).try_inverse().ok_or_else(|| Error::Numerical("singular normal matrix".into()))?;
        se_a[al] = (s2 * inv[(0, 0)]).sqrt();
        se_b[al] = (s2 * inv[(1, 1)]).sqrt();
        let r2: Vec<f64> = resid.iter().map(|r| r * r).collect();
        let m2 = mean(&r2);
        let v2 = r2.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / (n_obs as f64 - 1.0);
        se_g[al] = if gamma[al] > 0.0 { (v2 / n_obs as f64).sqrt() / (2.0 * gamma[al]) } else { 0.0 };
        let u: Vec<f64> = resid.iter().map(|r| if gamma[al] > 0.0 { r / gamma[al] } else { 0.0 }).collect();
        residuals.push(u);
    }
    let u_corr = (0..nf)
        .map(|i| (0..nf).map(|j| mean(&residuals[i].iter().zip(&residuals[j]).map(|(x, y)| x * y).collect::<Vec<_>>())).collect())
        .collect();
    Ok(NonlinearFit {
        a,
        b,
        gamma,
        se_a,
        se_b,
        se_gamma: se_g,
        skew,
        kurt,
        u_corr,
        residuals,
        samples: n_obs,
    })
}

/// Non-linear fit of the barred factors on the barred spot factor.
pub fn fit_nonlinear(factors: &FactorSeries) -> Result<NonlinearFit> {
    let w: Vec<Vec<f64>> = (0..factors.n_factors()).map(|a| factors.factor_bar(a)).collect();
    fit_nonlinear_series(&factors.dz_bar, &w)
}

fn check_dims(fit: &NonlinearFit, params: &ModelParams) -> Result<()> {
    if fit.n() != params.n() {
        return Err(invalid(format!("fit has {} factors, params {}", fit.n(), params.n())));
    }
    Ok(())
}

/// Exogenous curve vol `sqrt(Σ θ_α θ_β ω^α ω^β γ_α γ_β E[U^α U^β])` at tenor `tau`.
pub fn sigma_v(fit: &NonlinearFit, params: &ModelParams, tau: f64) -> Result<f64> {
    check_dims(fit, params)?;
    let n = params.n();
    let w: Vec<f64> = (0..n).map(|a| params.theta[a] * (-params.k[a] * tau).exp() * fit.gamma[a]).collect();
    let mut s = 0.0;
    for a in 0..n {
        for b in 0..n {
            s += w[a] * w[b] * fit.u_corr[a][b];
        }
    }
    Ok(s.max(0.0).sqrt())
}

/// Leverage correlation `Σ θ_α e^{-k_α Δ} (a_α ζ - b_α) sqrt(δt)`.
pub fn leverage_correlation(fit: &NonlinearFit, params: &ModelParams, delta: f64) -> Result<f64> {
    check_dims(fit, params)?;
    Ok((0..params.n()).map(|a| params.theta[a] * (-params.k[a] * delta).exp() * fit.spot_vol_corr(a)).sum::<f64>() * DT.sqrt())
}

/// Volatility clustering `Σ θ_α e^{-k_α Δ} (a_α(2+κ) - b_α ζ) sqrt(δt)`.
pub fn volatility_clustering(fit: &NonlinearFit, params: &ModelParams, delta: f64) -> Result<f64> {
    check_dims(fit, params)?;
    Ok((0..params.n()).map(|a| params.theta[a] * (-params.k[a] * delta).exp() * fit.square_vol_corr(a)).sum::<f64>() * DT.sqrt())
}

/// Share of the clustering function carried by the quadratic terms `a_α(2+κ)`.
pub fn clustering_nonlinear_share(fit: &NonlinearFit, params: &ModelParams, delta: f64) -> Result<f64> {
    let total = volatility_clustering(fit, params, delta)?;
    let nl: f64 = (0..params.n()).map(|a| params.theta[a] * (-params.k[a] * delta).exp() * fit.a[a] * (2.0 + fit.kurt)).sum::<f64>()
        * DT.sqrt();
    if total == 0.0 {
        return Err(Error::Numerical("clustering function vanishes".into()));
    }
    Ok(nl / total)
}

/// Asymmetric GARCH(1,1) coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchCoefficients {
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub phi4: f64,
}

impl GarchCoefficients {
    pub fn as_array(&self) -> [f64; 5] {
        [self.phi0, self.phi1, self.phi2, self.phi3, self.phi4]
    }
}

/// GARCH coefficients implied by the model. `mu_w` holds the annualised
/// factor drifts and `curve_slope` is `∂ξ/∂u` at the spot.
pub fn garch_map(
    fit: &NonlinearFit,
    params: &ModelParams,
    curve_slope: f64,
    stats: &SpotStats,
    mu_w: &[f64],
) -> Result<GarchCoefficients> {
    check_dims(fit, params)?;
    if mu_w.len() != params.n() {
        return Err(invalid("one drift per factor is required"));
    }
    let sd = DT.sqrt();
    let s2 = stats.sigma_z * stats.sigma_z;
    let (mut p1, mut p2, mut p3) = (0.0, 0.0, 0.0);
    for a in 0..params.n() {
        let tb = params.theta[a] * (-params.k[a] * DT).exp();
        let (aa, bb) = (fit.a[a], fit.b[a]);
        p1 += tb * aa / s2 * sd;
        p2 += tb * (2.0 * aa * stats.mu_z / s2 * sd + bb / stats.sigma_z) * sd;
        p3 += tb * mu_w[a] * DT - tb * aa * sd
            + tb * (aa * stats.mu_z * stats.mu_z / s2 * sd + bb * stats.mu_z / stats.sigma_z) * DT;
    }
    Ok(GarchCoefficients { phi0: curve_slope * DT, phi1: p1, phi2: p2, phi3: p3, phi4: sigma_v(fit, params, DT)? })
}

/// Least squares of `σ²_{t+1} = φ⁰ + φ¹ r_t²/δt + φ² r_t/sqrt(δt) + (1+φ³) σ²_t`.
/// `returns[t]` is the return over `[t, t+1]` and `variance[t]` the proxy at
/// `t`. `φ⁴` is the residual vol relative to `σ²_t`, annualised.
pub fn fit_garch_direct(returns: &[f64], variance: &[f64]) -> Result<GarchCoefficients> {
    let n = returns.len().min(variance.len().saturating_sub(1));
    if n < 250 {
        return Err(invalid("GARCH regression needs at least 250 aligned points"));
    }
    let sd = DT.sqrt();
    let x = DMatrix::from_fn(n, 4, |t, j| match j {
        0 => 1.0,
        1 => returns[t] * returns[t] / DT,
        2 => returns[t] / sd,
        _ => variance[t],
    });
    let y = DVector::from_iterator(n, (0..n).map(|t| variance[t + 1]));
    let xtx = x.transpose() * &x;
    if (0..4).any(|i| !(xtx[(i, i)] > 0.0)) {
        return Err(Error::Numerical("GARCH regressor is identically zero".into()));
    }
    let scale: Vec<f64> = (0..4).map(|i| xtx[(i, i)].sqrt()).collect();
    let norm = DMatrix::from_fn(4, 4, |i, j| xtx[(i, j)] / (scale[i] * scale[j]));
    let eig = norm.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    if eig.iter().any(|v| !v.is_finite()) || !(lo > 1e-12 * hi) {
        return Err(Error::Numerical("GARCH regressors are collinear".into()));
    }
    let coef = lstsq(&x, &y)?;
    let fitted = &x * &coef;
    let rel: f64 = (0..n).map(|t| ((y[t] - fitted[t]) / variance[t]).powi(2)).sum::<f64>() / n as f64;
    Ok(GarchCoefficients { phi0: coef[0], phi1: coef[1], phi2: coef[2], phi3: coef[3] - 1.0, phi4: rel.sqrt() / sd })
}
