//! Prior families for the hierarchical models: Normal priors on fixed
//! effects, Gamma priors on precisions (the "logGamma on log tau"
//! convention of the usual hierarchical-modelling software), and
//! penalised-complexity (PC) precision priors.
//!
//! The PC prior on a precision tau is defined by a tail statement
//! P(1/sqrt(tau) > sigma0) = alpha; the induced density is the type-2
//! Gumbel form
//!
//! ```text
//! pi(tau) = lambda/2 * tau^(-3/2) * exp(-lambda / sqrt(tau)),
//! lambda = -ln(alpha) / sigma0,
//! ```
//!
//! equivalently sigma = tau^(-1/2) ~ Exponential(lambda).

use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

const LN_2PI: f64 = 1.8378770664093453;

/// One prior family with its parameters.
///
/// `Normal { mean, variance }` is parameterised by the *variance*: the
/// N(0, 50) default on standardised covariates is weakly informative
/// read as a variance and sharply informative read as a precision.
/// Callers following a precision convention should convert before
/// building the spec.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PriorSpec {
    Normal { mean: f64, variance: f64 },
    /// Gamma(shape, rate) on tau, i.e. logGamma(shape, rate) on log tau.
    LogGamma { shape: f64, rate: f64 },
    /// PC precision prior with P(sigma > sigma0) = alpha.
    PcPrecision { sigma0: f64, alpha: f64 },
}

/// A parameter-range violation, reported rather than panicking so that
/// configuration validation can list every problem at once.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct PriorViolation {
    pub message: String,
}

impl PriorViolation {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// log N(x; mean, variance).
pub fn logdensity_normal(x: f64, mean: f64, variance: f64) -> f64 {
    debug_assert!(variance > 0.0);
    -0.5 * (LN_2PI + variance.ln()) - (x - mean) * (x - mean) / (2.0 * variance)
}

/// log Gamma(tau; shape a, rate b): a ln b - ln G(a) + (a-1) ln tau - b tau.
pub fn logdensity_loggamma_precision(tau: f64, a: f64, b: f64) -> f64 {
    debug_assert!(tau > 0.0 && a > 0.0 && b > 0.0);
    a * b.ln() - ln_gamma(a) + (a - 1.0) * tau.ln() - b * tau
}

/// log of the PC precision density; see the module docs for the form.
pub fn logdensity_pc_precision(tau: f64, sigma0: f64, alpha: f64) -> f64 {
    debug_assert!(tau > 0.0 && sigma0 > 0.0 && alpha > 0.0 && alpha < 1.0);
    let lambda = -alpha.ln() / sigma0;
    (lambda / 2.0).ln() - 1.5 * tau.ln() - lambda / tau.sqrt()
}

/// Check parameter ranges for a prior family.
pub fn validate_prior(spec: &PriorSpec) -> Result<(), PriorViolation> {
    match *spec {
        PriorSpec::Normal { mean, variance } => {
            if !mean.is_finite() {
                return Err(PriorViolation::new("mean must be finite"));
            }
            if !(variance > 0.0) || !variance.is_finite() {
                return Err(PriorViolation::new("variance must be positive"));
            }
        }
        PriorSpec::LogGamma { shape, rate } => {
            if !(shape > 0.0) || !shape.is_finite() {
                return Err(PriorViolation::new("shape must be positive"));
            }
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(PriorViolation::new("rate must be positive"));
            }
        }
        PriorSpec::PcPrecision { sigma0, alpha } => {
            if !(sigma0 > 0.0) || !sigma0.is_finite() {
                return Err(PriorViolation::new("sigma0 must be positive"));
            }
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(PriorViolation::new("alpha in (0,1)"));
            }
        }
    }
    Ok(())
}

impl PriorSpec {
    /// Log-density of this prior at `value` (a coefficient for Normal, a
    /// precision for the other families).
    pub fn logdensity(&self, value: f64) -> f64 {
        match *self {
            PriorSpec::Normal { mean, variance } => logdensity_normal(value, mean, variance),
            PriorSpec::LogGamma { shape, rate } => {
                logdensity_loggamma_precision(value, shape, rate)
            }
            PriorSpec::PcPrecision { sigma0, alpha } => {
                logdensity_pc_precision(value, sigma0, alpha)
            }
        }
    }

    /// Median of the precision under this prior; used to pin precisions
    /// during MAP initialisation. `None` for Normal priors.
    pub fn precision_median(&self) -> Option<f64> {
        match *self {
            PriorSpec::Normal { .. } => None,
            PriorSpec::LogGamma { shape, rate } => {
                let g = statrs::distribution::Gamma::new(shape, rate)
                    .expect("validated gamma parameters");
                Some(g.inverse_cdf(0.5))
            }
            PriorSpec::PcPrecision { sigma0, alpha } => {
                // sigma ~ Exp(lambda): median sigma = ln 2 / lambda.
                let lambda = -alpha.ln() / sigma0;
                let sigma_med = std::f64::consts::LN_2 / lambda;
                Some(sigma_med.powi(-2))
            }
        }
    }

    /// Gamma(shape, rate) parameters when this prior admits a conjugate
    /// precision update.
    pub fn gamma_parameters(&self) -> Option<(f64, f64)> {
        match *self {
            PriorSpec::LogGamma { shape, rate } => Some((shape, rate)),
            _ => None,
        }
    }

    pub fn is_precision_prior(&self) -> bool {
        !matches!(self, PriorSpec::Normal { .. })
    }
}
