//! Instantaneous forward-variance curves `ξ_t^{t+τ}`.
//!
//! A curve is a clamped cubic B-spline in the tenor `τ` whose coefficients
//! are stored as logarithms: `ξ(τ) = Σ_j exp(c_j) B_j(τ)`. Non-negative basis
//! functions with positive weights keep the curve positive, and a constant
//! coefficient vector reproduces a flat curve exactly (partition of unity).
//! Beyond the last knot the curve is extended flat up to `tau_max`.
//!
//! Integrals against exponential kernels are linear in the weights
//! `q_j = exp(c_j)`; [`SplineBasis::integrals`] returns those linear
//! functionals so that pricing and fitting reduce to dot products.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::market_data::Calendar;
use crate::model::ModelParams;
use crate::optimize::{levenberg_marquardt, LmOptions};
use crate::quad::{gauss_legendre, gl16, integrate_gl};
use crate::DT;

/// Default knot tenors in trading years: 0, 2w, 1m, 2m, ..., 6m, 8m.
pub fn default_knots() -> Vec<f64> {
    [0.0, 10.0, 21.0, 42.0, 63.0, 84.0, 105.0, 126.0, 168.0].iter().map(|d| d * DT).collect()
}

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    t: Vec<f64>,
    /// Maps weights to the nodal values of the piecewise-linear second derivative.
    d2: DMatrix<f64>,
}

impl SplineBasis {
    pub fn new(knots: &[f64]) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0.0 {
            return Err(invalid("spline knots must start at 0 and contain at least two points"));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("spline knots must be strictly increasing"));
        }
        let mut t = vec![knots[0]; DEGREE];
        t.extend_from_slice(knots);
        t.extend(std::iter::repeat_n(*knots.last().unwrap(), DEGREE));
        let nb = t.len() - DEGREE - 1;
        // first derivative coefficients (degree 2 on t[1..len-1])
        let mut d1 = DMatrix::zeros(nb - 1, nb);
        for j in 0..nb - 1 {
            let c = DEGREE as f64 / (t[j + DEGREE + 1] - t[j + 1]);
            d1[(j, j)] = -c;
            d1[(j, j + 1)] = c;
        }
        let mut d2s = DMatrix::zeros(nb - 2, nb - 1);
        for j in 0..nb - 2 {
            let c = (DEGREE - 1) as f64 / (t[j + DEGREE + 1] - t[j + 2]);
            d2s[(j, j)] = -c;
            d2s[(j, j + 1)] = c;
        }
        let d2 = d2s * d1;
        Ok(Self { knots: knots.to_vec(), t, d2 })
    }

    pub fn standard() -> Self {
        Self::new(&default_knots()).expect("default knots are valid")
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.t.len() - DEGREE - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_knot(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Non-zero basis values at `x` (clamped to the knot range) and the index
    /// of the first of them.
    pub fn eval_basis(&self, x: f64) -> (usize, [f64; DEGREE + 1]) {
        let nb = self.len();
        let x = x.clamp(0.0, self.last_knot());
        let span = if x >= self.last_knot() {
            nb - 1
        } else {
            // largest s with t[s] <= x, s in [DEGREE, nb - 1]
            let mut lo = DEGREE;
            let mut hi = nb;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if self.t[mid] <= x {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - self.t[span + 1 - j];
            right[j] = self.t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - DEGREE, n)
    }

    /// Linear functional of the weights giving `ξ''(x)` for `x` inside the knot range.
    pub fn second_derivative_row(&self, x: f64) -> Vec<f64> {
        let k = &self.knots;
        let x = x.clamp(0.0, self.last_knot());
        let i = match k.iter().position(|&v| v > x) {
            Some(p) => p - 1,
            None => k.len() - 2,
        };
        let w = (x - k[i]) / (k[i + 1] - k[i]);
        let row = self.d2.row(i) * (1.0 - w) + self.d2.row(i + 1) * w;
        row.iter().copied().collect()
    }

    /// Weights `I_j` with `∫_a^b ξ(τ) e^{-k(τ - shift)} dτ = Σ_j q_j I_j`,
    /// including the flat extension beyond the last knot.
    pub fn integrals(&self, a: f64, b: f64, k: f64, shift: f64) -> Vec<f64> {
        let nb = self.len();
        let mut out = vec![0.0; nb];
        self.accumulate_integrals(a, b, k, shift, 1.0, &mut out);
        out
    }

    /// Adds `scale * I_j` into `out`.
    pub fn accumulate_integrals(&self, a: f64, b: f64, k: f64, shift: f64, scale: f64, out: &mut [f64]) {
        let rule = gl16();
        let last = self.last_knot();
        let end = b.min(last);
        if a < end {
            for seg in self.knots.windows(2) {
                let lo = seg[0].max(a);
                let hi = seg[1].min(end);
                if hi <= lo {
                    continue;
                }
                let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                for (x, w) in rule.0.iter().zip(&rule.1) {
                    let tau = c + h * x;
                    let weight = scale * w * h * (-k * (tau - shift)).exp();
                    let (first, vals) = self.eval_basis(tau);
                    for (m, v) in vals.iter().enumerate() {
                        out[first + m] += weight * v;
                    }
                }
            }
        }
        if b > last {
            let lo = a.max(last);
            let flat = if k == 0.0 {
                b - lo
            } else {
                // ∫_lo^b e^{-k(τ-shift)} dτ
                (-k * (lo - shift)).exp() * (b - lo) * crate::kernel::g(k * (b - lo))
            };
            out[self.len() - 1] += scale * flat;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "CurveRepr", into = "CurveRepr")]
pub struct VarianceCurve {
    pub anchor: Option<NaiveDate>,
    pub log_coeffs: Vec<f64>,
    pub tau_max: f64,
    basis: SplineBasis,
    q: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CurveRepr {
    anchor: Option<NaiveDate>,
    knots: Vec<f64>,
    log_coeffs: Vec<f64>,
    tau_max: f64,
}

impl From<CurveRepr> for VarianceCurve {
    fn from(r: CurveRepr) -> Self {
        let basis = SplineBasis::new(&r.knots).unwrap_or_else(|_| SplineBasis::standard());
        Self::from_log_coeffs(basis, r.log_coeffs, r.tau_max, r.anchor)
    }
}

impl From<VarianceCurve> for CurveRepr {
    fn from(c: VarianceCurve) -> Self {
        Self { anchor: c.anchor, knots: c.basis.knots.clone(), log_coeffs: c.log_coeffs, tau_max: c.tau_max }
    }
}

impl PartialEq for VarianceCurve {
    fn eq(&self, other: &Self) -> bool {
        self.anchor == other.anchor
            && self.log_coeffs == other.log_coeffs
            && self.tau_max == other.tau_max
            && self.basis.knots == other.basis.knots
    }
}

impl VarianceCurve {
    pub fn from_log_coeffs(basis: SplineBasis, log_coeffs: Vec<f64>, tau_max: f64, anchor: Option<NaiveDate>) -> Self {
        assert_eq!(basis.len(), log_coeffs.len(), "coefficient count must match the basis");
        let q = log_coeffs.iter().map(|c| c.exp()).collect();
        Self { anchor, log_coeffs, tau_max: tau_max.max(basis.last_knot()), basis, q }
    }

    pub fn flat(xi: f64, tau_max: f64) -> Self {
        let basis = SplineBasis::standard();
        let n = basis.len();
        Self::from_log_coeffs(basis, vec![xi.ln(); n], tau_max, None)
    }

    /// Best spline approximation (least squares on a fine grid, in log space)
    /// of an arbitrary positive function of tenor.
    pub fn from_fn<F: Fn(f64) -> f64>(f: F, tau_max: f64) -> Self {
        let basis = SplineBasis::standard();
        let n = basis.len();
        let grid: Vec<f64> = (0..=200).map(|i| basis.last_knot() * i as f64 / 200.0).collect();
        let a = DMatrix::from_fn(grid.len(), n, |i, j| {
            let (first, v) = basis.eval_basis(grid[i]);
            if j >= first && j < first + 4 {
                v[j - first]
            } else {
                0.0
            }
        });
        let y = DVector::from_iterator(grid.len(), grid.iter().map(|&t| f(t)));
        let q = (a.transpose() * &a).cholesky().expect("basis Gram matrix is positive definite").solve(&(a.transpose() * y));
        let log_coeffs = q.iter().map(|v| v.max(1e-12).ln()).collect();
        Self::from_log_coeffs(basis, log_coeffs, tau_max, None)
    }

    pub fn with_anchor(mut self, anchor: NaiveDate) -> Self {
        self.anchor = Some(anchor);
        self
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    /// Positive weights `q_j = exp(c_j)`.
    pub fn weights(&self) -> &[f64] {
        &self.q
    }

    fn check(&self, tau: f64) -> Result<()> {
        if tau < -1e-12 || tau > self.tau_max * (1.0 + 1e-12) || tau.is_nan() {
            return Err(Error::Extrapolation { tau, tau_max: self.tau_max });
        }
        Ok(())
    }

    /// `ξ(τ)`; flat beyond the last knot.
    pub fn eval(&self, tau: f64) -> Result<f64> {
        self.check(tau)?;
        Ok(self.eval_unchecked(tau))
    }

    pub fn eval_unchecked(&self, tau: f64) -> f64 {
        let (first, v) = self.basis.eval_basis(tau);
        v.iter().enumerate().map(|(m, b)| b * self.q[first + m]).sum()
    }

    /// `ξ_t^u` for a calendar date `u`, tenor measured in business days.
    pub fn eval_at(&self, u: NaiveDate, calendar: &Calendar) -> Result<f64> {
        let anchor = self.anchor.ok_or_else(|| invalid("curve has no anchor date"))?;
        self.eval(calendar.year_fraction(anchor, u))
    }

    /// First derivative in tenor, by central difference on the spline.
    pub fn slope(&self, tau: f64) -> f64 {
        let h = 1e-5;
        let lo = (tau - h).max(0.0);
        let hi = (tau + h).min(self.tau_max);
        (self.eval_unchecked(hi) - self.eval_unchecked(lo)) / (hi - lo)
    }

    /// `∫_a^b ξ(τ) e^{-k(τ - shift)} dτ`.
    pub fn weighted_integral(&self, a: f64, b: f64, k: f64, shift: f64) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        let w = self.basis.integrals(a, b, k, shift);
        Ok(w.iter().zip(&self.q).map(|(a, b)| a * b).sum())
    }

    /// Forward variance strike `sqrt((1/ΔT) ∫_{T1}^{T2} ξ du)`.
    pub fn forward_var_strike(&self, t1: f64, t2: f64) -> Result<f64> {
        if !(t2 > t1) || t1 < 0.0 {
            return Err(invalid(format!("degenerate window [{t1}, {t2}]")));
        }
        Ok((self.weighted_integral(t1, t2, 0.0, 0.0)? / (t2 - t1)).sqrt())
    }

    /// Kernel-weighted strike `sqrt((1/ΔT) ∫_{T1}^{T2} ξ e^{-k (u-t)} du)`.
    pub fn kernel_weighted_strike(&self, t1: f64, t2: f64, k: f64) -> Result<f64> {
        if !(t2 > t1) || t1 < 0.0 {
            return Err(invalid(format!("degenerate window [{t1}, {t2}]")));
        }
        Ok((self.weighted_integral(t1, t2, k, 0.0)? / (t2 - t1)).sqrt())
    }

    pub fn min_on_grid(&self, n: usize) -> f64 {
        (0..=n).map(|i| self.eval_unchecked(self.tau_max * i as f64 / n as f64)).fold(f64::INFINITY, f64::min)
    }
}

/// One calibration target: a window `[t1, t2]` (tenors) and a quoted value.
/// `rel_sigma` is the relative per-day error std used as the residual scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitTarget {
    pub t1: f64,
    pub t2: f64,
    pub value: f64,
    pub rel_sigma: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveFitConfig {
    /// Weight on `∫ (ξ''/ξ̄)^2 dτ`.
    pub smoothness: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CurveFitConfig {
    fn default() -> Self {
        Self { smoothness: 1e-6, max_iter: 200, tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct CurveFit {
    pub curve: VarianceCurve,
    /// Model value minus target, per target.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Linear functionals needed to price one target on a fixed basis.
#[derive(Debug, Clone)]
pub struct PricingWeights {
    pub t1: f64,
    pub t2: f64,
    /// `∫ B_j`.
    pub level: Vec<f64>,
    /// `∫ B_j e^{-k_α (τ - T1)}`, one row per factor.
    pub kernel: Vec<Vec<f64>>,
}

impl PricingWeights {
    pub fn new(basis: &SplineBasis, t1: f64, t2: f64, ks: &[f64]) -> Self {
        Self {
            t1,
            t2,
            level: basis.integrals(t1, t2, 0.0, 0.0),
            kernel: ks.iter().map(|&k| basis.integrals(t1, t2, k, t1)).collect(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// VIX future value and its gradient in the weights, given the pricing
/// functionals. Without parameters the value is the variance strike.
pub fn price_with_gradient(w: &PricingWeights, q: &[f64], params: Option<&ModelParams>) -> (f64, Vec<f64>) {
    let dt = w.t2 - w.t1;
    let s0 = dot(&w.level, q);
    let strike = (s0 / dt).sqrt();
    let mut grad: Vec<f64> = w.level.iter().map(|l| l / (2.0 * (s0 * dt).sqrt())).collect();
    let params = match params {
        Some(p) if w.t1 > 0.0 => p,
        _ => return (strike, grad),
    };
    let n = params.n();
    let s: Vec<f64> = w.kernel.iter().map(|row| dot(row, q)).collect();
    // cc = (1/8) Σ Ω_ab E_ab s_a s_b / s0^2, E_ab = (1 - e^{-(ka+kb) T1})/(ka+kb)
    let mut cc = 0.0;
    let mut dcc_ds = vec![0.0; n];
    for a in 0..n {
        for b in 0..n {
            let e = w.t1 * crate::kernel::g((params.k[a] + params.k[b]) * w.t1);
            let c = params.omega(a, b) * e / 8.0;
            cc += c * s[a] * s[b];
            dcc_ds[a] += 2.0 * c * s[b];
        }
    }
    cc /= s0 * s0;
    let value = strike * (1.0 - cc);
    // d value = (1-cc) d strike - strike d cc ; d cc/d s0 = -2 cc / s0
    for (j, gj) in grad.iter_mut().enumerate() {
        let mut dcc = -2.0 * cc / s0 * w.level[j];
        for a in 0..n {
            dcc += dcc_ds[a] / (s0 * s0) * w.kernel[a][j];
        }
        *gj = (1.0 - cc) * *gj - strike * dcc;
    }
    (value, grad)
}

/// Fits log-coefficients so that modelled values match the targets in the
/// least-squares sense, with a curvature penalty. Targets are priced as VIX
/// futures (with convexity) when `params` is given, as variance strikes
/// otherwise.
pub fn fit_curve(
    targets: &[FitTarget],
    params: Option<&ModelParams>,
    cfg: &CurveFitConfig,
    init: Option<&[f64]>,
) -> Result<CurveFit> {
    if targets.len() < 2 {
        return Err(invalid("curve fit needs at least two targets"));
    }
    let basis = SplineBasis::standard();
    let ks: Vec<f64> = params.map(|p| p.k.clone()).unwrap_or_default();
    let weights: Vec<PricingWeights> = targets.iter().map(|t| PricingWeights::new(&basis, t.t1, t.t2, &ks)).collect();
    fit_with_weights(&basis, targets, &weights, params, cfg, init)
}

/// Same as [`fit_curve`] with precomputed pricing functionals.
pub fn fit_with_weights(
    basis: &SplineBasis,
    targets: &[FitTarget],
    weights: &[PricingWeights],
    params: Option<&ModelParams>,
    cfg: &CurveFitConfig,
    init: Option<&[f64]>,
) -> Result<CurveFit> {
    let nb = basis.len();
    for t in targets {
        if !(t.t2 > t.t1) || t.t1 < 0.0 || !(t.value > 0.0) || !(t.rel_sigma > 0.0) {
            return Err(invalid(format!("bad fit target {t:?}")));
        }
    }
    let mean_var = targets.iter().map(|t| t.value * t.value).sum::<f64>() / targets.len() as f64;
    let tau_max = targets.iter().map(|t| t.t2).fold(basis.last_knot(), f64::max);
    // curvature penalty rows: two-point Gauss rule per knot segment is exact for (ξ'')^2
    let (gx, gw) = gauss_legendre(2);
    let mut pen_rows: Vec<Vec<f64>> = Vec::new();
    if cfg.smoothness > 0.0 {
        for seg in basis.knots().windows(2) {
            let (c, h) = (0.5 * (seg[0] + seg[1]), 0.5 * (seg[1] - seg[0]));
            for (x, w) in gx.iter().zip(&gw) {
                let scale = (cfg.smoothness * w * h).sqrt() / mean_var;
                pen_rows.push(basis.second_derivative_row(c + h * x).iter().map(|v| v * scale).collect());
            }
        }
    }
    let m = targets.len() + pen_rows.len();
    let x0: Vec<f64> = match init {
        Some(c) if c.len() == nb => c.to_vec(),
        _ => vec![mean_var.ln(); nb],
    };
    let opts = LmOptions { max_iter: cfg.max_iter, ftol: cfg.tol, gtol: 1e-14 };
    let res = levenberg_marquardt(
        |c, r, jac| {
            if r.len() != m {
                *r = DVector::zeros(m);
                *jac = DMatrix::zeros(m, nb);
            }
            let q: Vec<f64> = c.iter().map(|v| v.exp()).collect();
            for (i, (t, w)) in targets.iter().zip(weights).enumerate() {
                let (v, g) = price_with_gradient(w, &q, params);
                let s = 1.0 / (t.value * t.rel_sigma);
                r[i] = (v - t.value) * s;
                for j in 0..nb {
                    jac[(i, j)] = g[j] * q[j] * s;
                }
            }
            for (p, row) in pen_rows.iter().enumerate() {
                let i = targets.len() + p;
                r[i] = dot(row, &q);
                for j in 0..nb {
                    jac[(i, j)] = row[j] * q[j];
                }
            }
        },
        &x0,
        &opts,
    );
    let curve = VarianceCurve::from_log_coeffs(basis.clone(), res.x, tau_max, None);
    let residuals = targets
        .iter()
        .zip(weights)
        .map(|(t, w)| price_with_gradient(w, curve.weights(), params).0 - t.value)
        .collect();
    let fit = CurveFit { curve, residuals, iterations: res.iterations, converged: res.converged };
    if !fit.converged {
        return Err(Error::Convergence(format!(
            "curve fit stopped after {} iterations with residuals {:?}",
            fit.iterations, fit.residuals
        )));
    }
    Ok(fit)
}

/// Integrates `f` over `[a, b]` with 16-point Gauss-Legendre on each knot segment.
pub fn integrate_by_segments<F: Fn(f64) -> f64>(basis: &SplineBasis, f: F, a: f64, b: f64) -> f64 {
    let rule = gl16();
    let mut edges: Vec<f64> = vec![a];
    edges.extend(basis.knots().iter().copied().filter(|&k| k > a && k < b));
    edges.push(b);
    edges.windows(2).map(|w| integrate_gl(&f, w[0], w[1], rule)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wavy() -> VarianceCurve {
        let basis = SplineBasis::standard();
        let c: Vec<f64> = (0..basis.len()).map(|j| (0.03 + 0.01 * (j as f64 * 0.9).sin()).ln()).collect();
        VarianceCurve::from_log_coeffs(basis, c, 1.0, None)
    }

    fn riemann(curve: &VarianceCurve, a: f64, b: f64, k: f64) -> f64 {
        let n = 100_000;
        let h = (b - a) / n as f64;
        (0..n).map(|i| {
            let t = a + h * (i as f64 + 0.5);
            curve.eval_unchecked(t) * (-k * t).exp()
        }).sum::<f64>() * h
    }

    #[test]
    fn flat_curve_is_flat() {
        let c = VarianceCurve::flat(0.04, 1.0);
        for i in 0..=50 {
            assert!((c.eval(i as f64 / 50.0).unwrap() - 0.04).abs() < 1e-15);
        }
        assert!((c.forward_var_strike(0.1, 0.3).unwrap() - 0.2).abs() < 1e-14);
        assert!(c.eval(1.5).is_err());
    }

    #[test]
    fn basis_partition_of_unity() {
        let b = SplineBasis::standard();
        for i in 0..=97 {
            let x = b.last_knot() * i as f64 / 97.0;
            let (_, v) = b.eval_basis(x);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn second_derivative_matches_finite_difference() {
        let c = wavy();
        for &x in &[0.02, 0.1, 0.3, 0.55] {
            let row = c.basis().second_derivative_row(x);
            let d2 = dot(&row, c.weights());
            let h = 1e-4;
            let fd = (c.eval_unchecked(x + h) - 2.0 * c.eval_unchecked(x) + c.eval_unchecked(x - h)) / (h * h);
            assert!((d2 - fd).abs() < 1e-4 * (1.0 + fd.abs()), "{x}: {d2} vs {fd}");
        }
    }

    #[test]
    fn strikes_match_riemann_oracle() {
        let c = wavy();
        let (a, b) = (0.05, 0.05 + crate::VIX_WINDOW);
        let k = c.forward_var_strike(a, b).unwrap();
        assert!((k * k - riemann(&c, a, b, 0.0) / (b - a)).abs() < 1e-8);
        let kk = c.kernel_weighted_strike(a, b, 10.25).unwrap();
        assert!((kk * kk - riemann(&c, a, b, 10.25) / (b - a)).abs() < 1e-8);
        assert!(kk <= k);
        // window crossing the flat extension
        let (a, b) = (0.6, 0.9);
        assert!((c.weighted_integral(a, b, 1.05, 0.0).unwrap() - riemann(&c, a, b, 1.05)).abs() < 1e-9);
    }

    #[test]
    fn linear_curve_strike() {
        let c = VarianceCurve::from_fn(|t| 0.03 + 0.02 * t, 1.0);
        let (t1, t2) = (0.1, 0.3);
        let k = c.forward_var_strike(t1, t2).unwrap();
        assert!((k - (0.03f64 + 0.02 * (t1 + t2) / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_flat_and_spline() {
        let targets: Vec<FitTarget> = (0..8)
            .map(|i| {
                let t1 = i as f64 / 12.0;
                FitTarget { t1, t2: t1 + crate::VIX_WINDOW, value: 0.2, rel_sigma: 0.01 }
            })
            .collect();
        let fit = fit_curve(&targets, None, &CurveFitConfig::default(), None).unwrap();
        for i in 0..=40 {
            assert!((fit.curve.eval_unchecked(0.6 * i as f64 / 40.0) - 0.04).abs() < 1e-6);
        }
        let truth = wavy();
        let targets: Vec<FitTarget> = (0..40)
            .map(|i| {
                let t1 = i as f64 * 0.015;
                FitTarget { t1, t2: t1 + crate::VIX_WINDOW, value: truth.forward_var_strike(t1, t1 + crate::VIX_WINDOW).unwrap(), rel_sigma: 1e-3 }
            })
            .collect();
        let cfg = CurveFitConfig { smoothness: 0.0, ..Default::default() };
        let fit = fit_curve(&targets, None, &cfg, None).unwrap();
        for i in 0..=50 {
            let t = 1.0 / 12.0 + (0.5 - 1.0 / 12.0) * i as f64 / 50.0;
            let (a, b) = (fit.curve.eval_unchecked(t), truth.eval_unchecked(t));
            assert!((a / b - 1.0).abs() < 1e-4, "{t}: {a} {b}");
        }
    }

    #[test]
    fn inconsistent_targets_split_by_weight() {
        // two identical windows quoting different strikes; with no penalty the fitted
        // strike k minimises ((k-v1)/s1)^2 + ((k-v2)/s2)^2 in absolute terms
        let w = (0.1, 0.1 + crate::VIX_WINDOW);
        let (v1, v2) = (0.20, 0.22);
        let t = [
            FitTarget { t1: w.0, t2: w.1, value: v1, rel_sigma: 0.01 / v1 },
            FitTarget { t1: w.0, t2: w.1, value: v2, rel_sigma: 0.02 / v2 },
        ];
        let fit = fit_curve(&t, None, &CurveFitConfig { smoothness: 1e-9, ..Default::default() }, None).unwrap();
        let k = fit.curve.forward_var_strike(w.0, w.1).unwrap();
        let expected = (v1 / 1e-4 + v2 / 4e-4) / (1.0 / 1e-4 + 1.0 / 4e-4);
        assert!((k - expected).abs() < 1e-6, "{k} vs {expected}");
        assert!((fit.residuals[0] / fit.residuals[1] + 0.25).abs() < 1e-3);
    }

    #[test]
    fn serde_round_trip() {
        let c = wavy();
        let s = serde_json::to_string(&c).unwrap();
        let back: VarianceCurve = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.eval_unchecked(0.3), back.eval_unchecked(0.3));
    }
}
