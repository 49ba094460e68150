//! Shared oracle machinery for the integration tests: adaptive
//! quadrature, a two-sample KS test, and an IRLS Poisson fitter. All of
//! it is independent of the library's own computation paths.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Adaptive Simpson integration with error carry-over.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 60)
}

/// Integral over (0, upper) of exp(logdensity(tau)) for a density on the
/// positive axis, via the substitution tau = (v / (1 - v))^2.
pub fn integrate_positive_density_to(
    logdensity: &dyn Fn(f64) -> f64,
    upper: f64,
    tol: f64,
) -> f64 {
    let v_hi = if upper.is_finite() {
        let s = upper.sqrt();
        s / (1.0 + s)
    } else {
        1.0 - 1e-9
    };
    let g = move |v: f64| {
        if v <= 0.0 || v >= 1.0 {
            return 0.0;
        }
        let ratio = v / (1.0 - v);
        let tau = ratio * ratio;
        let jac = 2.0 * v / ((1.0 - v) * (1.0 - v) * (1.0 - v));
        let d = logdensity(tau).exp();
        let out = d * jac;
        if out.is_finite() {
            out
        } else {
            0.0
        }
    };
    adaptive_simpson(&g, 1e-9, v_hi, tol)
}

/// Integral over (0, infinity).
pub fn integrate_positive_density(logdensity: &dyn Fn(f64) -> f64, tol: f64) -> f64 {
    integrate_positive_density_to(logdensity, f64::INFINITY, tol)
}

/// Integral over the whole real line of exp(logdensity(x)), via
/// x = center + scale * tan(u).
pub fn integrate_real_line(
    logdensity: &dyn Fn(f64) -> f64,
    center: f64,
    scale: f64,
    tol: f64,
) -> f64 {
    let g = move |u: f64| {
        let t = u.tan();
        let x = center + scale * t;
        let jac = scale * (1.0 + t * t);
        let out = logdensity(x).exp() * jac;
        if out.is_finite() {
            out
        } else {
            0.0
        }
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    adaptive_simpson(&g, -half_pi + 1e-9, half_pi - 1e-9, tol)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let xv = xs[i];
        let yv = ys[j];
        let t = xv.min(yv);
        while i < na && xs[i] <= t {
            i += 1;
        }
        while j < nb && ys[j] <= t {
            j += 1;
        }
        let fa = i as f64 / na as f64;
        let fb = j as f64 / nb as f64;
        d = d.max((fa - fb).abs());
    }
    let n_eff = (na as f64 * nb as f64) / (na + nb) as f64;
    let lambda = (n_eff.sqrt() + 0.12 + 0.11 / n_eff.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0_f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        p += term;
    }
    (d, p.clamp(0.0, 1.0))
}

/// Poisson maximum likelihood via iteratively reweighted least squares;
/// log link with offsets e.
pub fn irls_poisson(x: &DMatrix<f64>, y: &[f64], e: &[f64]) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut beta: DVector<f64> = DVector::zeros(p);
    for _ in 0..200 {
        let eta = x * &beta;
        let mut xtwx: DMatrix<f64> = DMatrix::zeros(p, p);
        let mut xtwz: DVector<f64> = DVector::zeros(p);
        for i in 0..n {
            let mu = e[i] * eta[i].exp();
            let wi = mu;
            let zi = eta[i] + (y[i] - mu) / mu;
            for a in 0..p {
                xtwz[a] += wi * x[(i, a)] * zi;
                for b in 0..p {
                    xtwx[(a, b)] += wi * x[(i, a)] * x[(i, b)];
                }
            }
        }
        let new_beta = xtwx.lu().solve(&xtwz).expect("IRLS solve");
        let diff = (&new_beta - &beta).amax();
        beta = new_beta;
        if diff < 1e-12 {
            break;
        }
    }
    beta
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}
