//! Quadrature oracles for the prior families: normalisation, the PC
//! tail identity, and the logGamma/Gamma change of variables.

mod common;

use common::{integrate_positive_density, integrate_positive_density_to, integrate_real_line};
use crashlattice::priors::{
    logdensity_loggamma_precision, logdensity_normal, logdensity_pc_precision,
};

#[test]
fn normal_densities_integrate_to_one() {
    for (mean, var) in [(0.0, 1.0), (0.0, 50.0), (2.5, 0.3)] {
        let mass = integrate_real_line(
            &|x| logdensity_normal(x, mean, var),
            mean,
            var.sqrt(),
            1e-12,
        );
        assert!((mass - 1.0).abs() < 1e-8, "N({mean},{var}): {mass}");
    }
}

#[test]
fn gamma_precision_densities_integrate_to_one() {
    for (a, b) in [(1.0, 1.0), (2.0, 0.5), (1.0, 5e-5)] {
        let mass =
            integrate_positive_density(&|tau| logdensity_loggamma_precision(tau, a, b), 1e-12);
        assert!((mass - 1.0).abs() < 1e-8, "Gamma({a},{b}): {mass}");
    }
}

#[test]
fn pc_precision_densities_integrate_to_one() {
    for (sigma0, alpha) in [(1.0, 0.1), (2.0, 0.1), (0.5, 0.05)] {
        let mass =
            integrate_positive_density(&|tau| logdensity_pc_precision(tau, sigma0, alpha), 1e-12);
        assert!((mass - 1.0).abs() < 1e-8, "PC({sigma0},{alpha}): {mass}");
    }
}

#[test]
fn pc_tail_identity_matches_alpha() {
    // P(sigma > sigma0) = P(tau < sigma0^-2) must equal alpha.
    for (sigma0, alpha) in [(1.0, 0.1), (2.0, 0.1)] {
        let mass = integrate_positive_density_to(
            &|tau| logdensity_pc_precision(tau, sigma0, alpha),
            sigma0.powi(-2),
            1e-12,
        );
        assert!(
            (mass - alpha).abs() < 1e-8,
            "PC({sigma0},{alpha}) tail: {mass}"
        );
    }
}

#[test]
fn loggamma_on_log_scale_matches_gamma_after_jacobian() {
    // If tau ~ Gamma(a, b) then xi = ln tau has density
    // Gamma(exp(xi); a, b) * exp(xi); total mass over the real line must
    // still be one.
    let (a, b) = (1.0, 5e-5);
    let mass = integrate_real_line(
        &|xi: f64| {
            if xi < -700.0 {
                return f64::NEG_INFINITY;
            }
            logdensity_loggamma_precision(xi.exp(), a, b) + xi
        },
        (1.0_f64 / b).ln(),
        3.0,
        1e-12,
    );
    assert!((mass - 1.0).abs() < 1e-6, "logGamma mass: {mass}");
}
