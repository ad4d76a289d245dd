//! Small dense optimizers: Levenberg-Marquardt for curve fits and
//! Nelder-Mead for the likelihood.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-12, gtol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Half the squared residual norm.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `0.5 |r(x)|^2`. The callback fills residuals and the Jacobian
/// (rows = residuals) for a given `x`.
pub fn levenberg_marquardt<F>(mut f: F, x0: &[f64], opts: &LmOptions) -> LmResult
where
    F: FnMut(&[f64], &mut DVector<f64>, &mut DMatrix<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::zeros(0);
    let mut jac = DMatrix::zeros(0, n);
    f(&x, &mut r, &mut jac);
    let mut cost = 0.5 * r.norm_squared();
    let mut mu = 1e-3;
    let mut r_try = DVector::zeros(0);
    let mut jac_try = DMatrix::zeros(0, n);
    for iter in 0..opts.max_iter {
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.amax() <= opts.gtol {
            return LmResult { x, cost, iterations: iter, converged: true };
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let x_try: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            f(&x_try, &mut r_try, &mut jac_try);
            let c_try = 0.5 * r_try.norm_squared();
            if c_try.is_finite() && c_try < cost {
                let rel = (cost - c_try) / cost.max(1e-300);
                x = x_try;
                std::mem::swap(&mut r, &mut r_try);
                std::mem::swap(&mut jac, &mut jac_try);
                cost = c_try;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                if rel < opts.ftol {
                    return LmResult { x, cost, iterations: iter + 1, converged: true };
                }
                break;
            }
            mu *= 4.0;
        }
        if !improved {
            // no descent direction left at machine precision
            return LmResult { x, cost, iterations: iter + 1, converged: true };
        }
    }
    LmResult { x, cost, iterations: opts.max_iter, converged: false }
}

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this.
    pub ftol: f64,
    /// Stop when the simplex diameter falls below this.
    pub xtol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self { max_evals: 4000, ftol: 1e-10, xtol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead minimisation with adaptive coefficients (Gao-Han) and an
/// initial simplex of per-coordinate steps.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], opts: &NmOptions) -> NmResult {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| nan_to_inf(f(v))).collect();
    let mut evals = n + 1;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = (values[n] - values[0]).abs();
        let diam = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if (spread <= opts.ftol * (1.0 + values[0].abs()) && diam <= opts.xtol) || evals >= opts.max_evals {
            let converged = evals < opts.max_evals;
            return NmResult { x: simplex[0].clone(), fx: values[0], evals, converged };
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = along(-alpha);
        let fr = nan_to_inf(f(&xr));
        evals += 1;
        if fr < values[0] {
            let xe = along(-alpha * gamma);
            let fe = nan_to_inf(f(&xe));
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[n] {
            let xc = along(-alpha * rho);
            let fc = nan_to_inf(f(&xc));
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = nan_to_inf(f(&xc));
            (xc, fc)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            for j in 0..n {
                simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
            }
            values[i] = nan_to_inf(f(&simplex[i]));
        }
        evals += n;
    }
}

fn nan_to_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Bracketed root by bisection refined with the secant step (Illinois variant).
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    let mut side = 0;
    for _ in 0..300 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() < tol * (1.0 + c.abs()) {
            return Some(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Some(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], &NmOptions { max_evals: 5000, ftol: 1e-14, xtol: 1e-10 });
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r);
    }

    #[test]
    fn lm_exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-1.3 * t).exp()).collect();
        let res = levenberg_marquardt(
            |x, r, j| {
                *r = DVector::from_iterator(ts.len(), ts.iter().zip(&ys).map(|(t, y)| x[0] * (-x[1] * t).exp() - y));
                *j = DMatrix::from_fn(ts.len(), 2, |i, k| {
                    let e = (-x[1] * ts[i]).exp();
                    if k == 0 {
                        e
                    } else {
                        -x[0] * ts[i] * e
                    }
                });
            },
            &[1.0, 0.5],
            &LmOptions::default(),
        );
        assert!((res.x[0] - 2.0).abs() < 1e-8 && (res.x[1] - 1.3).abs() < 1e-8);
    }

    #[test]
    fn root_finder() {
        let r = find_root(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }
}
