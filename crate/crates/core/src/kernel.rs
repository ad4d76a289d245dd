//! Exponential-kernel integrals.
//!
//! Every closed form in the crate reduces to three dimensionless functions of
//! `x = k * T`:
//!
//! * `g(x) = (1 - e^{-x}) / x`, the average of `e^{-k s}` over `[0, T]`;
//! * `h(x) = (x - 1 + e^{-x}) / x^2`, the normalised double integral
//!   `T^{-2} ∫_0^T ∫_0^u e^{-k(u-v)} dv du`;
//! * `l(x, y, z)`, the normalised integral
//!   `(x y z^3)^{-1} ∫_0^z (1 - e^{-x s})(1 - e^{-y s}) ds`.
//!
//! Each has a cancellation-prone closed form near zero, so small arguments
//! switch to Taylor series.

/// Exponential kernel `ω(τ) = e^{-k τ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpKernel {
    pub k: f64,
}

impl ExpKernel {
    pub fn new(k: f64) -> Self {
        Self { k }
    }

    #[inline]
    pub fn eval(&self, tau: f64) -> f64 {
        (-self.k * tau).exp()
    }
}

const SERIES_CUTOFF_G: f64 = 1e-6;
const SERIES_CUTOFF_H: f64 = 0.5;
const SERIES_CUTOFF_L: f64 = 1.0;

/// `g(x) = (1 - e^{-x}) / x`, with `g(0) = 1`.
pub fn g(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF_G {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `h(x) = (x - 1 + e^{-x}) / x^2`, with `h(0) = 1/2`.
pub fn h(x: f64) -> f64 {
    if x.abs() < SERIES_CUTOFF_H {
        // sum_n (-x)^n / (n + 2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for n in 1..40 {
            term *= -x / (n + 2) as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (x + (-x).exp_m1()) / (x * x)
    }
}

/// `l(x, y, z)` for kernel rates `x, y` and window `z`. Depends only on
/// `(x z, y z)`; tends to 1/3 as `z -> 0` and to `1/(x y z^2)` as `z -> ∞`.
pub fn l(x: f64, y: f64, z: f64) -> f64 {
    l_scaled(x * z, y * z)
}

/// `l` written in the scaled arguments `a = x z`, `b = y z`:
/// `(1 - g(a) - g(b) + g(a + b)) / (a b)`.
pub fn l_scaled(a: f64, b: f64) -> f64 {
    if a + b < SERIES_CUTOFF_L {
        // sum_{n>=2} (-1)^n / (n+1)! * ((a+b)^n - a^n - b^n) / (a b)
        // where ((a+b)^n - a^n - b^n)/(ab) = sum_{j=1}^{n-1} C(n,j) a^{j-1} b^{n-j-1}.
        let mut sum = 0.0;
        let mut fact = 2.0; // (n+1)! at n = 1
        for n in 2..40usize {
            fact *= (n + 1) as f64;
            let mut inner = 0.0;
            let mut binom = 1.0;
            for j in 1..n {
                binom = binom * (n - j + 1) as f64 / j as f64;
                inner += binom * a.powi(j as i32 - 1) * b.powi((n - j) as i32 - 1);
            }
            let term = inner / fact;
            sum += if n % 2 == 0 { term } else { -term };
            if term < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        // 1 - g(a) = a h(a); g(b) - g(a+b) = a [(1 - e^{-b}) - b e^{-b} g(a)] / (b (a+b)).
        let bracket = -(-b).exp_m1() - b * (-b).exp() * g(a);
        (h(a) - bracket / (b * (a + b))) / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_adaptive;

    #[test]
    fn limits() {
        assert_eq!(g(0.0), 1.0);
        assert_eq!(h(0.0), 0.5);
        assert!((l(3.0, 2.0, 1e-9) - 1.0 / 3.0).abs() < 1e-9);
        let z = 1e4;
        assert!((l(3.0, 2.0, z) * 6.0 * z * z - 1.0).abs() < 1e-3);
    }

    #[test]
    fn branches_are_continuous() {
        for x in [SERIES_CUTOFF_G, SERIES_CUTOFF_H] {
            let lo = x * (1.0 - 1e-12);
            let hi = x * (1.0 + 1e-12);
            assert!((g(lo) - g(hi)).abs() < 1e-12);
            assert!((h(lo) - h(hi)).abs() < 1e-12);
        }
        let lo = l_scaled(0.3, 0.7 * (1.0 - 1e-12));
        let hi = l_scaled(0.3, 0.7 * (1.0 + 1e-12));
        assert!((lo / hi - 1.0).abs() < 1e-11);
    }

    #[test]
    fn l_matches_defining_integral() {
        for &(x, y, z) in &[(10.25, 1.05, 30.0 / 365.0), (10.25, 10.25, 0.5), (1.05, 1.05, 2.0), (0.3, 16.0, 0.01)] {
            let f = |s: f64| -(-x * s).exp_m1() * -(-y * s).exp_m1();
            let q = integrate_adaptive(&f, 0.0, z, 1e-14, 0.0) / (x * y * z * z * z);
            assert!((l(x, y, z) / q - 1.0).abs() < 1e-11, "{x} {y} {z}");
        }
    }
}
