//! Descriptive statistics of extracted series: moments and tails, risk
//! premium, principal modes of curve moves, distance correlation, ACF.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::calibration::FactorSeries;
use crate::curve::VarianceCurve;
use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    /// Annualised mean (sample mean / δt).
    pub mean: f64,
    /// Annualised vol (sample std / sqrt(δt)).
    pub vol: f64,
    /// Bias-corrected skewness; `None` for a constant series.
    pub skew: Option<f64>,
    /// Bias-corrected excess kurtosis; `None` for a constant series.
    pub kurt: Option<f64>,
    /// Hill tail exponents beyond the 98% (upper) and 2% (lower) quantiles.
    pub tail_upper: Option<f64>,
    pub tail_lower: Option<f64>,
    pub degenerate: bool,
}

fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    let h = (s.len() - 1) as f64 * p;
    let i = h.floor() as usize;
    let f = h - i as f64;
    if i + 1 < s.len() {
        s[i] * (1.0 - f) + s[i + 1] * f
    } else {
        s[i]
    }
}

/// Hill estimator of the tail index over the samples beyond `threshold`
/// (which must be positive).
pub fn hill(tail: &[f64], threshold: f64) -> Option<f64> {
    if !(threshold > 0.0) || tail.len() < 5 {
        return None;
    }
    let m = tail.iter().map(|x| (x / threshold).ln()).sum::<f64>() / tail.len() as f64;
    (m > 0.0).then(|| 1.0 / m)
}

pub fn moments(series: &[f64], dt: f64) -> Result<MomentReport> {
    let n = series.len();
    if n < 30 {
        return Err(invalid(format!("moments need at least 30 samples, got {n}")));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("series contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let var = m2 * nf / (nf - 1.0);
    let degenerate = !(m2 > 1e-300) || m2.sqrt() <= 1e-14 * mean.abs();
    let (skew, kurt) = if degenerate {
        (None, None)
    } else {
        let g1 = m3 / m2.powf(1.5);
        let g2 = m4 / (m2 * m2) - 3.0;
        let s = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
        let k = ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
        (Some(s), Some(k))
    };
    let (tail_upper, tail_lower) = if degenerate {
        (None, None)
    } else {
        let mut s = series.to_vec();
        s.sort_by(|a, b| a.total_cmp(b));
        let hi = quantile_sorted(&s, 0.98);
        let lo = quantile_sorted(&s, 0.02);
        let up: Vec<f64> = s.iter().copied().filter(|x| *x > hi).collect();
        let dn: Vec<f64> = s.iter().filter(|x| **x < lo).map(|x| -x).collect();
        (hill(&up, hi), hill(&dn, -lo))
    };
    Ok(MomentReport {
        n,
        mean: mean / dt,
        vol: if degenerate { 0.0 } else { var.sqrt() / dt.sqrt() },
        skew,
        kurt,
        tail_upper,
        tail_lower,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPremium {
    pub sigma_z: f64,
    pub kurt_z: f64,
    /// `1 - σ_Z²`.
    pub premium: f64,
    /// `sqrt(2+κ) σ_Z²`.
    pub premium_vol: f64,
    /// Annualised drift of each factor.
    pub factor_drifts: Vec<f64>,
}

pub fn risk_premium(sigma_z: f64, kurt_z: f64, factor_drifts: Vec<f64>) -> RiskPremium {
    RiskPremium {
        sigma_z,
        kurt_z,
        premium: 1.0 - sigma_z * sigma_z,
        premium_vol: (2.0 + kurt_z).sqrt() * sigma_z * sigma_z,
        factor_drifts,
    }
}

pub fn risk_premium_stats(factors: &FactorSeries, dt: f64) -> Result<RiskPremium> {
    let mz = moments(&factors.dz, dt)?;
    let drifts = (0..factors.n_factors()).map(|a| moments(&factors.factor(a), dt).map(|m| m.mean)).collect::<Result<_>>()?;
    Ok(risk_premium(mz.vol, mz.kurt.unwrap_or(0.0), drifts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDecomposition {
    pub grid: Vec<f64>,
    /// Variance shares, descending, summing to one.
    pub shares: Vec<f64>,
    /// Orthonormal eigenvectors on the grid, one per share.
    pub modes: Vec<Vec<f64>>,
    pub total_variance: f64,
    pub rank_deficient: bool,
}

impl ModeDecomposition {
    pub fn cumulative_share(&self, m: usize) -> f64 {
        self.shares.iter().take(m).sum()
    }
}

/// Weekly tenors out to six months.
pub fn default_mode_grid() -> Vec<f64> {
    (0..=25).map(|j| 5.0 * j as f64 / 252.0).collect()
}

fn decompose(cov: DMatrix<f64>, grid: &[f64]) -> Result<ModeDecomposition> {
    let n = grid.len();
    let eig = SymmetricEigen::new(cov);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("curve moves have zero variance".into()));
    }
    let rank = vals.iter().filter(|v| **v > 1e-12 * vals[0]).count();
    let modes = idx
        .iter()
        .map(|&i| {
            let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // sign: positive sum so modes are comparable across decompositions
            let s = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            v.iter().map(|x| s * x).collect()
        })
        .collect();
    Ok(ModeDecomposition {
        grid: grid.to_vec(),
        shares: vals.iter().map(|v| v / total).collect(),
        modes,
        total_variance: total,
        rank_deficient: rank < n,
    })
}

/// Principal modes of the relative curve moves `δξ/ξ` at fixed tenors.
pub fn kl_modes_from_samples(samples: &[Vec<f64>], grid: &[f64]) -> Result<ModeDecomposition> {
    if samples.len() < 101 {
        return Err(invalid("mode decomposition needs at least 100 daily moves"));
    }
    let n = grid.len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(invalid("samples must lie on the tenor grid"));
    }
    let moves: Vec<Vec<f64>> = samples.windows(2).map(|w| (0..n).map(|i| w[1][i] / w[0][i] - 1.0).collect()).collect();
    let m = moves.len() as f64;
    let mean: Vec<f64> = (0..n).map(|i| moves.iter().map(|r| r[i]).sum::<f64>() / m).collect();
    let cov = DMatrix::from_fn(n, n, |i, j| moves.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (m - 1.0));
    decompose(cov, grid)
}

pub fn kl_modes(curves: &[VarianceCurve], grid: &[f64]) -> Result<ModeDecomposition> {
    let samples: Vec<Vec<f64>> = curves.iter().map(|c| grid.iter().map(|&t| c.eval(t)).collect::<Result<_>>()).collect::<Result<_>>()?;
    kl_modes_from_samples(&samples, grid)
}

/// Modes of the model covariance `Σ Ω_αβ e^{-k_α τ} e^{-k_β τ'}`.
pub fn model_modes(params: &ModelParams, grid: &[f64]) -> Result<ModeDecomposition> {
    let n = params.n();
    let cov = DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                s += params.omega(a, b) * (-params.k[a] * grid[i]).exp() * (-params.k[b] * grid[j]).exp();
            }
        }
        s
    });
    decompose(cov, grid)
}

/// `|<u, v>|` for unit vectors.
pub fn mode_overlap(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs()
}

/// Székely distance correlation. O(n²) time, O(n) memory. A constant input
/// gives 0.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if n != y.len() || n < 30 {
        return Err(invalid("distance correlation needs equal lengths of at least 30"));
    }
    let nf = n as f64;
    let row_mean = |s: &[f64]| -> Vec<f64> { (0..n).map(|i| s.iter().map(|v| (s[i] - v).abs()).sum::<f64>() / nf).collect() };
    let (ax, ay) = (row_mean(x), row_mean(y));
    let gx = ax.iter().sum::<f64>() / nf;
    let gy = ay.iter().sum::<f64>() / nf;
    let (mut vxy, mut vxx, mut vyy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let a = (x[i] - x[j]).abs() - ax[i] - ax[j] + gx;
            let b = (y[i] - y[j]).abs() - ay[i] - ay[j] + gy;
            vxy += a * b;
            vxx += a * a;
            vyy += b * b;
        }
    }
    if !(vxx > 0.0) || !(vyy > 0.0) {
        return Ok(0.0);
    }
    Ok((vxy.max(0.0) / (vxx * vyy).sqrt()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfReport {
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
    /// White-noise band `1.96/sqrt(n)`.
    pub band: f64,
    pub outside: usize,
}

pub fn autocorr_check(series: &[f64], lags: &[usize]) -> Result<AcfReport> {
    let n = series.len();
    if n < 100 {
        return Err(invalid("autocorrelation check needs at least 100 samples"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let c0: f64 = series.iter().map(|x| (x - mean).powi(2)).sum();
    if !(c0 > 0.0) {
        return Err(Error::Numerical("constant series has no autocorrelation".into()));
    }
    let acf: Vec<f64> = lags
        .iter()
        .map(|&l| if l >= n { 0.0 } else { (0..n - l).map(|t| (series[t] - mean) * (series[t + l] - mean)).sum::<f64>() / c0 })
        .collect();
    let band = 1.96 / (n as f64).sqrt();
    let outside = acf.iter().filter(|a| a.abs() > band).count();
    Ok(AcfReport { lags: lags.to_vec(), acf, band, outside })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{StandardNormal, StudentT};

    #[test]
    fn gaussian_null_and_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 1_000_000;
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m = moments(&x, 1.0).unwrap();
        let nf = n as f64;
        assert!(m.skew.unwrap().abs() < 3.0 * (6.0 / nf).sqrt());
        assert!(m.kurt.unwrap().abs() < 3.0 * (24.0 / nf).sqrt());
        assert!((m.vol - 1.0).abs() < 4.0 / (2.0 * nf).sqrt());
        let c = moments(&[2.5; 50], 1.0).unwrap();
        assert!(c.degenerate && c.skew.is_none() && c.vol == 0.0);
        assert!(moments(&[1.0; 10], 1.0).is_err());
    }

    #[test]
    fn student_tail_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = StudentT::new(4.0).unwrap();
        let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample(t)).collect();
        let m = moments(&x, 1.0).unwrap();
        // large-sample limit of the estimator at the 2% threshold, by quadrature
        use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};
        let d = StudentsT::new(0.0, 1.0, 4.0).unwrap();
        let u = d.inverse_cdf(0.98);
        let f = |s: f64| if s <= 0.0 { 0.0 } else { d.pdf(u / s) * (1.0 / s).ln() * u / (s * s) };
        let limit = 0.02 / crate::quad::adaptive_simpson(&f, 0.0, 1.0, 1e-12);
        assert!((limit - 3.2798).abs() < 1e-3, "{limit}");
        let se = limit / (0.02 * 1e6f64).sqrt();
        for v in [m.tail_upper.unwrap(), m.tail_lower.unwrap()] {
            assert!((v - limit).abs() < 4.0 * se, "{v} vs {limit}");
        }
    }

    #[test]
    fn risk_premium_values() {
        let r = risk_premium(0.8, 1.59, vec![]);
        assert!((r.premium - 0.36).abs() < 1e-12);
        assert!((r.premium_vol - 3.59f64.sqrt() * 0.64).abs() < 1e-12);
        assert!((r.premium_vol - 1.21).abs() < 0.005);
        let r = risk_premium(1.0, 0.0, vec![]);
        assert_eq!(r.premium, 0.0);
        assert!((r.premium_vol - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn model_mode_limits() {
        let grid = default_mode_grid();
        let one = ModelParams::one_factor(3.0, 0.7);
        let m = model_modes(&one, &grid).unwrap();
        assert!((m.shares[0] - 1.0).abs() < 1e-12);
        let norm: f64 = grid.iter().map(|t| (-6.0 * t).exp()).sum::<f64>().sqrt();
        for (v, t) in m.modes[0].iter().zip(&grid) {
            assert!((v - (-3.0 * t).exp() / norm).abs() < 1e-10);
        }
        let p = ModelParams::paper();
        let m = model_modes(&p, &grid).unwrap();
        assert!((m.shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.cumulative_share(2) > 1.0 - 1e-12);
        // Gram matrix is the identity
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = m.modes[i].iter().zip(&m.modes[j]).map(|(a, b)| a * b).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn separated_kernels_give_individual_modes() {
        // 2-point grid: direct eigen-solve of the 2x2 covariance
        let p = ModelParams::two_factor([40.0, 0.01], [1.0, 1.0], 0.0, [0.0, 0.0]).unwrap();
        let grid = [0.0, 0.5];
        let m = model_modes(&p, &grid).unwrap();
        let c = [[2.0, 1.0 * (-20.0f64).exp() + (-0.005f64).exp()], [0.0, (-40.0f64).exp() + (-0.01f64).exp()]];
        let (a, b, d) = (c[0][0], c[0][1], c[1][1]);
        let l1 = 0.5 * (a + d + ((a - d).powi(2) + 4.0 * b * b).sqrt());
        assert!((m.shares[0] - l1 / (a + d)).abs() < 1e-12);
    }

    fn brute_dcor(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let center = |s: &[f64]| {
            let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (s[i] - s[j]).abs()).collect()).collect();
            let rm: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
            let cm: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
            let g = rm.iter().sum::<f64>() / n as f64;
            (0..n).map(|i| (0..n).map(|j| d[i][j] - rm[i] - cm[j] + g).collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        let (a, b) = (center(x), center(y));
        let dot = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| -> f64 {
            p.iter().zip(q).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u * v).sum::<f64>()).sum::<f64>() / (n * n) as f64
        };
        (dot(&a, &b) / (dot(&a, &a) * dot(&b, &b)).sqrt()).sqrt()
    }

    #[test]
    fn distance_correlation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
        assert!((distance_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let d = distance_correlation(&x, &sq).unwrap();
        assert!(d > 0.3, "{d}");
        assert!((d - brute_dcor(&x, &sq)).abs() < 1e-12);
        let a: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(distance_correlation(&a, &b).unwrap() < 0.1);
        assert_eq!(distance_correlation(&a, &vec![1.0; 2000]).unwrap(), 0.0);
    }

    #[test]
    fn acf_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let e: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let lags: Vec<usize> = (1..=40).collect();
        let r = autocorr_check(&e, &lags).unwrap();
        assert!(r.outside <= 6, "{}", r.outside);
        let mut x = vec![0.0];
        for t in 1..20_000 {
            x.push(0.5 * x[t - 1] + e[t]);
        }
        let r = autocorr_check(&x, &[1, 2]).unwrap();
        assert!((r.acf[0] - 0.5).abs() < 0.03 && (r.acf[1] - 0.25).abs() < 0.03);
    }
}
