//! The three hierarchical specifications as a joint log-posterior.
//!
//! All variants share the Poisson outcome layer
//!
//! ```text
//! y_i | lambda_i ~ Poisson(e_i * lambda_i)
//! log lambda_i = beta_0 + beta_1 * c_i + sum_j beta_j z_ij + theta_i
//! ```
//!
//! where c_i is the observed proxy w_i in the baseline variant and the
//! latent true covariate x_i in the measurement-error variants. The ME
//! variants add the exposure model x_i ~ N(mu_i, 1/tau_eps) with
//! mu_i = alpha_0 + sum_j alpha_j ztilde_ij, and the error model
//! w_i ~ N(x_i, 1/tau_u) (classical) or w_i ~ N(x_i + phi_i, 1/tau_u)
//! (spatial), with theta and phi carrying ICAR priors.
//!
//! The unstructured residuals eps_i = x_i - mu_i and u_i = w_i - x_i -
//! phi_i are kept implicit: they are determined by the sampled
//! quantities, which keeps the state dimension down without changing the
//! posterior.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::gmrf::{GmrfError, IcarStructure};
use crate::priors::{validate_prior, PriorSpec, PriorViolation};

const LN_2PI: f64 = 1.8378770664093453;

/// Hard cap on the linear predictor: beyond this, exp(eta) is numerically
/// useless on standardised data and almost certainly a modelling error.
pub const ETA_GUARD: f64 = 50.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("linear predictor is not finite at index {index}")]
    NonFiniteEta { index: usize },
    #[error("linear predictor {value} at index {index} exceeds the +/-{guard} overflow guard; rescale covariates or offsets")]
    EtaOutOfRange {
        index: usize,
        value: f64,
        guard: f64,
    },
    #[error("offset at index {index} must be positive")]
    NonPositiveOffset { index: usize },
    #[error("column {name:?} is flagged standardised but has mean {mean:e}, sd {sd}")]
    NotStandardized { name: String, mean: f64, sd: f64 },
    #[error("dummy column {name:?} contains a value other than 0/1 at row {index}")]
    NotDummy { name: String, index: usize },
    #[error("non-finite value in {what} at index {index}")]
    NonFiniteValue { what: &'static str, index: usize },
    #[error("non-finite {component} component in joint log-posterior")]
    NonFiniteComponent { component: &'static str },
    #[error("precision {name} must be positive, got {value}")]
    NonPositivePrecision { name: &'static str, value: f64 },
    #[error("prior for {parameter}: {violation}")]
    InvalidPrior {
        parameter: String,
        violation: PriorViolation,
    },
    #[error("prior for {parameter} must be a {expected} family")]
    WrongPriorFamily {
        parameter: String,
        expected: &'static str,
    },
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
}

/// Which hierarchical specification to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    ClassicalMe,
    SpatialMe,
}

impl Variant {
    pub fn has_measurement_error(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn has_spatial_error(self) -> bool {
        matches!(self, Variant::SpatialMe)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::ClassicalMe => "classical_me",
            Variant::SpatialMe => "spatial_me",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Dummy,
}

/// Per-column record of the transformation applied on ingestion, used to
/// map effects back to the original scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
    pub standardized: bool,
}

impl Standardization {
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            sd: 1.0,
            standardized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub kind: ColumnKind,
    pub standardization: Standardization,
}

impl Column {
    pub fn numeric_standardized(name: impl Into<String>, raw: &[f64]) -> Self {
        let (values, mean, sd) = standardize(raw);
        Self {
            name: name.into(),
            values,
            kind: ColumnKind::Numeric,
            standardization: Standardization {
                mean,
                sd,
                standardized: true,
            },
        }
    }

    pub fn dummy(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            kind: ColumnKind::Dummy,
            standardization: Standardization::identity(),
        }
    }

    pub fn raw_numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
            kind: ColumnKind::Numeric,
            standardization: Standardization::identity(),
        }
    }
}

/// Centre to zero mean and scale to unit variance; returns
/// (standardised values, mean, sd). Constant columns keep sd = 1 to stay
/// finite.
pub fn standardize(raw: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = raw.len().max(1) as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    (raw.iter().map(|v| (v - mean) / sd).collect(), mean, sd)
}

/// Column-major design matrix with names and standardisation metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignMatrix {
    columns: Vec<Column>,
    n_rows: usize,
}

impl DesignMatrix {
    pub fn empty(n_rows: usize) -> Self {
        Self {
            columns: Vec::new(),
            n_rows,
        }
    }

    pub fn from_columns(columns: Vec<Column>) -> Result<Self, ModelError> {
        let n_rows = columns.first().map_or(0, |c| c.values.len());
        for c in &columns {
            if c.values.len() != n_rows {
                return Err(ModelError::DimensionMismatch {
                    what: "design matrix column",
                    expected: n_rows,
                    got: c.values.len(),
                });
            }
        }
        Ok(Self { columns, n_rows })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.columns[col].values[row]
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    fn validate(&self) -> Result<(), ModelError> {
        for c in &self.columns {
            for (i, v) in c.values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(ModelError::NonFiniteValue {
                        what: "design matrix",
                        index: i,
                    });
                }
            }
            match c.kind {
                ColumnKind::Dummy => {
                    if let Some(i) = c.values.iter().position(|&v| v != 0.0 && v != 1.0) {
                        return Err(ModelError::NotDummy {
                            name: c.name.clone(),
                            index: i,
                        });
                    }
                }
                ColumnKind::Numeric if c.standardization.standardized => {
                    let n = c.values.len().max(1) as f64;
                    let mean = c.values.iter().sum::<f64>() / n;
                    let sd = (c.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / n)
                        .sqrt();
                    if mean.abs() > 1e-8 || (sd - 1.0).abs() > 1e-8 {
                        return Err(ModelError::NotStandardized {
                            name: c.name.clone(),
                            mean,
                            sd,
                        });
                    }
                }
                ColumnKind::Numeric => {}
            }
        }
        Ok(())
    }
}

/// Per-segment data: counts, offsets, the proxy covariate, and the two
/// design matrices (regression covariates z and exposure covariates
/// ztilde).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: Vec<u64>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub w_name: String,
    pub w_standardization: Standardization,
    pub z: DesignMatrix,
    pub ztilde: DesignMatrix,
}

impl Dataset {
    pub fn new(
        y: Vec<u64>,
        e: Vec<f64>,
        w: Vec<f64>,
        w_name: impl Into<String>,
        w_standardization: Standardization,
        z: DesignMatrix,
        ztilde: DesignMatrix,
    ) -> Result<Self, ModelError> {
        let n = y.len();
        for (what, len) in [("offsets", e.len()), ("proxy", w.len())] {
            if len != n {
                return Err(ModelError::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        for (m, what) in [(&z, "z design matrix"), (&ztilde, "ztilde design matrix")] {
            if m.n_cols() > 0 && m.n_rows() != n {
                return Err(ModelError::DimensionMismatch {
                    what,
                    expected: n,
                    got: m.n_rows(),
                });
            }
        }
        if let Some(i) = e.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(ModelError::NonPositiveOffset { index: i });
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteValue {
                what: "proxy covariate",
                index: i,
            });
        }
        let w_standardization_valid = !w_standardization.standardized || {
            let nn = n.max(1) as f64;
            let mean = w.iter().sum::<f64>() / nn;
            let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nn).sqrt();
            mean.abs() <= 1e-8 && (sd - 1.0).abs() <= 1e-8
        };
        if !w_standardization_valid {
            let nn = n.max(1) as f64;
            let mean = w.iter().sum::<f64>() / nn;
            let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nn).sqrt();
            return Err(ModelError::NotStandardized {
                name: "w".into(),
                mean,
                sd,
            });
        }
        z.validate()?;
        ztilde.validate()?;
        Ok(Self {
            y,
            e,
            w,
            w_name: w_name.into(),
            w_standardization,
            z,
            ztilde,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Prior assignments for every sampled parameter. The single
/// `fixed_effects` family covers all regression and exposure
/// coefficients; `beta_x` optionally overrides the proxy / latent-
/// covariate slope, which is the knob prior-sensitivity sweeps turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorTable {
    pub fixed_effects: PriorSpec,
    pub beta_x: Option<PriorSpec>,
    pub tau_theta: PriorSpec,
    pub tau_eps: PriorSpec,
    pub tau_u: PriorSpec,
    pub tau_phi: PriorSpec,
}

impl Default for PriorTable {
    fn default() -> Self {
        Self {
            fixed_effects: PriorSpec::Normal {
                mean: 0.0,
                variance: 50.0,
            },
            beta_x: None,
            tau_theta: PriorSpec::LogGamma {
                shape: 1.0,
                rate: 5e-5,
            },
            tau_eps: PriorSpec::PcPrecision {
                sigma0: 1.0,
                alpha: 0.1,
            },
            tau_u: PriorSpec::PcPrecision {
                sigma0: 2.0,
                alpha: 0.1,
            },
            tau_phi: PriorSpec::LogGamma {
                shape: 1.0,
                rate: 5e-5,
            },
        }
    }
}

impl PriorTable {
    /// Prior for regression coefficient `j` (0 = intercept, 1 = the
    /// proxy/latent slope, 2.. = error-free covariates).
    pub fn beta_prior(&self, j: usize) -> PriorSpec {
        if j == 1 {
            self.beta_x.unwrap_or(self.fixed_effects)
        } else {
            self.fixed_effects
        }
    }
}

/// Variant selector plus all prior settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    #[serde(default)]
    pub priors: PriorTable,
    /// The spatially structured effect in the regression equation;
    /// turning it off gives a plain GLM, used by validation oracles.
    #[serde(default = "default_true")]
    pub include_spatial_theta: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            priors: PriorTable::default(),
            include_spatial_theta: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let named: Vec<(String, PriorSpec)> = vec![
            ("fixed_effects".into(), self.priors.fixed_effects),
            ("tau_theta".into(), self.priors.tau_theta),
            ("tau_eps".into(), self.priors.tau_eps),
            ("tau_u".into(), self.priors.tau_u),
            ("tau_phi".into(), self.priors.tau_phi),
        ];
        for (parameter, spec) in named
            .into_iter()
            .chain(self.priors.beta_x.map(|p| ("beta_x".into(), p)))
        {
            validate_prior(&spec).map_err(|violation| ModelError::InvalidPrior {
                parameter: parameter.clone(),
                violation,
            })?;
            let is_precision_slot = parameter.starts_with("tau_");
            if is_precision_slot && !spec.is_precision_prior() {
                return Err(ModelError::WrongPriorFamily {
                    parameter,
                    expected: "precision",
                });
            }
            if !is_precision_slot && spec.is_precision_prior() {
                return Err(ModelError::WrongPriorFamily {
                    parameter,
                    expected: "normal",
                });
            }
        }
        Ok(())
    }

    /// Number of regression coefficients for `data`: intercept + slope +
    /// error-free covariates.
    pub fn n_beta(&self, data: &Dataset) -> usize {
        2 + data.z.n_cols()
    }

    /// Number of exposure coefficients: intercept + exposure covariates
    /// (measurement-error variants only).
    pub fn n_alpha(&self, data: &Dataset) -> usize {
        if self.variant.has_measurement_error() {
            1 + data.ztilde.n_cols()
        } else {
            0
        }
    }

    /// Display names for the scalar parameters, in chain-storage order:
    /// regression coefficients, exposure coefficients, then precisions.
    pub fn scalar_names(&self, data: &Dataset) -> Vec<String> {
        let mut names = vec!["Intercept".to_string(), data.w_name.clone()];
        names.extend(data.z.names().iter().map(|s| s.to_string()));
        if self.variant.has_measurement_error() {
            names.push("exposure:Intercept".to_string());
            names.extend(
                data.ztilde
                    .names()
                    .iter()
                    .map(|s| format!("exposure:{s}")),
            );
        }
        if self.include_spatial_theta {
            names.push("tau_theta".to_string());
        }
        if self.variant.has_measurement_error() {
            names.push("tau_eps".to_string());
            names.push("tau_u".to_string());
        }
        if self.variant.has_spatial_error() {
            names.push("tau_phi".to_string());
        }
        names
    }
}

/// Every latent quantity of the hierarchy. Vectors not used by a variant
/// are empty; `theta` is empty when the spatial regression effect is
/// switched off.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub tau_theta: f64,
    pub tau_eps: f64,
    pub tau_u: f64,
    pub tau_phi: f64,
}

impl LatentState {
    /// A starting state: zero coefficients and fields, the proxy as the
    /// initial latent covariate, precisions at their prior medians.
    pub fn initial(spec: &ModelSpec, data: &Dataset) -> Self {
        let n = data.len();
        let me = spec.variant.has_measurement_error();
        Self {
            beta: vec![0.0; spec.n_beta(data)],
            alpha: vec![0.0; spec.n_alpha(data)],
            theta: if spec.include_spatial_theta {
                vec![0.0; n]
            } else {
                Vec::new()
            },
            x: if me { data.w.clone() } else { Vec::new() },
            phi: if spec.variant.has_spatial_error() {
                vec![0.0; n]
            } else {
                Vec::new()
            },
            tau_theta: spec.priors.tau_theta.precision_median().unwrap_or(1.0),
            tau_eps: spec.priors.tau_eps.precision_median().unwrap_or(1.0),
            tau_u: spec.priors.tau_u.precision_median().unwrap_or(1.0),
            tau_phi: spec.priors.tau_phi.precision_median().unwrap_or(1.0),
        }
    }
}

/// The log-linear predictor eta, using the proxy w (baseline) or the
/// latent covariate x (ME variants). Fails on a non-finite value or on
/// the +/-ETA_GUARD overflow guard, naming the offending index.
pub fn linear_predictor(
    state: &LatentState,
    data: &Dataset,
    variant: Variant,
) -> Result<Vec<f64>, ModelError> {
    let n = data.len();
    let covariate: &[f64] = if variant.has_measurement_error() {
        &state.x
    } else {
        &data.w
    };
    if covariate.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "latent covariate",
            expected: n,
            got: covariate.len(),
        });
    }
    if state.beta.len() != 2 + data.z.n_cols() {
        return Err(ModelError::DimensionMismatch {
            what: "beta",
            expected: 2 + data.z.n_cols(),
            got: state.beta.len(),
        });
    }
    let use_theta = !state.theta.is_empty();
    if use_theta && state.theta.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "theta",
            expected: n,
            got: state.theta.len(),
        });
    }
    let mut eta = Vec::with_capacity(n);
    for i in 0..n {
        let mut v = state.beta[0] + state.beta[1] * covariate[i];
        for (j, col) in data.z.columns().iter().enumerate() {
            v += state.beta[2 + j] * col.values[i];
        }
        if use_theta {
            v += state.theta[i];
        }
        if !v.is_finite() {
            return Err(ModelError::NonFiniteEta { index: i });
        }
        if v.abs() > ETA_GUARD {
            return Err(ModelError::EtaOutOfRange {
                index: i,
                value: v,
                guard: ETA_GUARD,
            });
        }
        eta.push(v);
    }
    Ok(eta)
}

/// Poisson log-likelihood sum_i [y_i (ln e_i + eta_i) - e_i exp(eta_i)
/// - ln Gamma(y_i + 1)].
pub fn loglik_poisson(y: &[u64], e: &[f64], eta: &[f64]) -> Result<f64, ModelError> {
    if e.len() != y.len() || eta.len() != y.len() {
        return Err(ModelError::DimensionMismatch {
            what: "poisson log-likelihood",
            expected: y.len(),
            got: e.len().min(eta.len()),
        });
    }
    let mut total = 0.0;
    for i in 0..y.len() {
        if eta[i] > ETA_GUARD {
            return Err(ModelError::EtaOutOfRange {
                index: i,
                value: eta[i],
                guard: ETA_GUARD,
            });
        }
        total += poisson_term(y[i], e[i], eta[i]);
    }
    if !total.is_finite() {
        return Err(ModelError::NonFiniteComponent {
            component: "poisson log-likelihood",
        });
    }
    Ok(total)
}

#[inline]
pub(crate) fn poisson_term(y: u64, e: f64, eta: f64) -> f64 {
    let yf = y as f64;
    yf * (e.ln() + eta) - e * eta.exp() - ln_gamma(yf + 1.0)
}

/// Gaussian log-density of the exposure model,
/// sum_i log N(x_i; mu_i, 1/tau_eps).
pub fn exposure_logdensity(state: &LatentState, data: &Dataset) -> f64 {
    let n = data.len();
    debug_assert_eq!(state.x.len(), n);
    let tau = state.tau_eps;
    let mut ss = 0.0;
    for i in 0..n {
        let r = state.x[i] - exposure_mean(state, data, i);
        ss += r * r;
    }
    0.5 * n as f64 * (tau.ln() - LN_2PI) - 0.5 * tau * ss
}

#[inline]
pub(crate) fn exposure_mean(state: &LatentState, data: &Dataset, i: usize) -> f64 {
    let mut mu = state.alpha[0];
    for (j, col) in data.ztilde.columns().iter().enumerate() {
        mu += state.alpha[1 + j] * col.values[i];
    }
    mu
}

/// Gaussian log-density of the error model: classical w_i ~ N(x_i,
/// 1/tau_u), spatial w_i ~ N(x_i + phi_i, 1/tau_u).
pub fn error_logdensity(state: &LatentState, data: &Dataset, variant: Variant) -> f64 {
    let n = data.len();
    debug_assert_eq!(state.x.len(), n);
    let tau = state.tau_u;
    let spatial = variant.has_spatial_error();
    let mut ss = 0.0;
    for i in 0..n {
        let mut r = data.w[i] - state.x[i];
        if spatial {
            r -= state.phi[i];
        }
        ss += r * r;
    }
    0.5 * n as f64 * (tau.ln() - LN_2PI) - 0.5 * tau * ss
}

/// The full joint log-posterior: Poisson likelihood, Gaussian ME blocks
/// when applicable, ICAR fields, and every prior.
pub fn joint_logposterior(
    state: &LatentState,
    data: &Dataset,
    spec: &ModelSpec,
    icar: &IcarStructure,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    if !data.is_empty() {
        let eta = linear_predictor(state, data, spec.variant)?;
        total += loglik_poisson(&data.y, &data.e, &eta)?;
    }
    if spec.variant.has_measurement_error() {
        let expo = exposure_logdensity(state, data);
        if !expo.is_finite() {
            return Err(ModelError::NonFiniteComponent {
                component: "exposure model",
            });
        }
        let err = error_logdensity(state, data, spec.variant);
        if !err.is_finite() {
            return Err(ModelError::NonFiniteComponent {
                component: "error model",
            });
        }
        total += expo + err;
        if !(state.tau_eps > 0.0) {
            return Err(ModelError::NonPositivePrecision {
                name: "tau_eps",
                value: state.tau_eps,
            });
        }
        if !(state.tau_u > 0.0) {
            return Err(ModelError::NonPositivePrecision {
                name: "tau_u",
                value: state.tau_u,
            });
        }
        total += spec.priors.tau_eps.logdensity(state.tau_eps);
        total += spec.priors.tau_u.logdensity(state.tau_u);
    }
    if spec.include_spatial_theta {
        total += icar.logdensity(&state.theta, state.tau_theta)?;
        total += spec.priors.tau_theta.logdensity(state.tau_theta);
    }
    if spec.variant.has_spatial_error() {
        total += icar.logdensity(&state.phi, state.tau_phi)?;
        total += spec.priors.tau_phi.logdensity(state.tau_phi);
    }
    for (j, b) in state.beta.iter().enumerate() {
        total += spec.priors.beta_prior(j).logdensity(*b);
    }
    if spec.variant.has_measurement_error() {
        for a in &state.alpha {
            total += spec.priors.fixed_effects.logdensity(*a);
        }
    }
    if !total.is_finite() {
        return Err(ModelError::NonFiniteComponent { component: "prior" });
    }
    Ok(total)
}

/// Gradient of the joint log-posterior with respect to the latent
/// coordinates (precisions held fixed). Field gradients are reported in
/// the ambient space; constraint handling (projection) is the caller's
/// business.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn joint_gradient(
    state: &LatentState,
    data: &Dataset,
    spec: &ModelSpec,
    icar: &IcarStructure,
) -> Result<Gradient, ModelError> {
    let n = data.len();
    let me = spec.variant.has_measurement_error();
    let spatial = spec.variant.has_spatial_error();
    let covariate: &[f64] = if me { &state.x } else { &data.w };

    let eta = if n > 0 {
        linear_predictor(state, data, spec.variant)?
    } else {
        Vec::new()
    };
    // Poisson residuals y_i - e_i exp(eta_i)
    let resid: Vec<f64> = (0..n)
        .map(|i| data.y[i] as f64 - data.e[i] * eta[i].exp())
        .collect();

    let mut g_beta = vec![0.0; state.beta.len()];
    for i in 0..n {
        g_beta[0] += resid[i];
        g_beta[1] += resid[i] * covariate[i];
        for (j, col) in data.z.columns().iter().enumerate() {
            g_beta[2 + j] += resid[i] * col.values[i];
        }
    }
    for (j, g) in g_beta.iter_mut().enumerate() {
        if let PriorSpec::Normal { mean, variance } = spec.priors.beta_prior(j) {
            *g -= (state.beta[j] - mean) / variance;
        }
    }

    let mut g_alpha = vec![0.0; state.alpha.len()];
    let mut g_x = vec![0.0; if me { n } else { 0 }];
    if me {
        for i in 0..n {
            let eps = state.x[i] - exposure_mean(state, data, i);
            let mut u = data.w[i] - state.x[i];
            if spatial {
                u -= state.phi[i];
            }
            g_x[i] = resid[i] * state.beta[1] - state.tau_eps * eps + state.tau_u * u;
            g_alpha[0] += state.tau_eps * eps;
            for (j, col) in data.ztilde.columns().iter().enumerate() {
                g_alpha[1 + j] += state.tau_eps * eps * col.values[i];
            }
        }
        if let PriorSpec::Normal { mean, variance } = spec.priors.fixed_effects {
            for (j, g) in g_alpha.iter_mut().enumerate() {
                *g -= (state.alpha[j] - mean) / variance;
            }
        }
    }

    let g_theta = if spec.include_spatial_theta {
        let k_theta = icar.structure_matrix().mul_vec(&state.theta)?;
        (0..n)
            .map(|i| resid[i] - state.tau_theta * k_theta[i])
            .collect()
    } else {
        Vec::new()
    };

    let g_phi = if spatial {
        let k_phi = icar.structure_matrix().mul_vec(&state.phi)?;
        (0..n)
            .map(|i| {
                let u = data.w[i] - state.x[i] - state.phi[i];
                state.tau_u * u - state.tau_phi * k_phi[i]
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(Gradient {
        beta: g_beta,
        alpha: g_alpha,
        x: g_x,
        theta: g_theta,
        phi: g_phi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(n: usize) -> Dataset {
        let y: Vec<u64> = (0..n).map(|i| (i % 3) as u64).collect();
        let e = vec![1.0; n];
        let w: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) - 0.4).collect();
        Dataset::new(
            y,
            e,
            w,
            "traffic",
            Standardization::identity(),
            DesignMatrix::empty(n),
            DesignMatrix::empty(n),
        )
        .unwrap()
    }

    fn path_icar(n: usize) -> IcarStructure {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        IcarStructure::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn zero_state_gives_unit_rates() {
        let data = tiny_dataset(5);
        let spec = ModelSpec::new(Variant::Baseline);
        let mut state = LatentState::initial(&spec, &data);
        state.theta = vec![0.0; 5];
        let eta = linear_predictor(&state, &data, Variant::Baseline).unwrap();
        assert!(eta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn intercept_only_predictor() {
        let data = tiny_dataset(4);
        let spec = ModelSpec::new(Variant::Baseline);
        let mut state = LatentState::initial(&spec, &data);
        state.beta[0] = 1.0;
        let eta = linear_predictor(&state, &data, Variant::Baseline).unwrap();
        assert!(eta.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn predictor_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let n = 20;
        let z = DesignMatrix::from_columns(vec![
            Column::raw_numeric("z1", (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            Column::raw_numeric("z2", (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        ])
        .unwrap();
        let data = Dataset::new(
            vec![0; n],
            vec![1.0; n],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            "traffic",
            Standardization::identity(),
            z,
            DesignMatrix::empty(n),
        )
        .unwrap();
        let spec = ModelSpec::new(Variant::Baseline);
        let mut state = LatentState::initial(&spec, &data);
        for b in &mut state.beta {
            *b = rng.gen_range(-0.5..0.5);
        }
        for t in &mut state.theta {
            *t = rng.gen_range(-0.5..0.5);
        }
        let eta = linear_predictor(&state, &data, Variant::Baseline).unwrap();
        for i in 0..n {
            let direct = state.beta[0]
                + state.beta[1] * data.w[i]
                + state.beta[2] * data.z.value(i, 0)
                + state.beta[3] * data.z.value(i, 1)
                + state.theta[i];
            assert!((eta[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_guard_trips() {
        let data = tiny_dataset(3);
        let spec = ModelSpec::new(Variant::Baseline);
        let mut state = LatentState::initial(&spec, &data);
        state.beta[0] = 51.0;
        match linear_predictor(&state, &data, Variant::Baseline) {
            Err(ModelError::EtaOutOfRange { index: 0, .. }) => {}
            other => panic!("expected guard error, got {other:?}"),
        }
    }

    #[test]
    fn poisson_loglik_trivial_values() {
        // y=0, e=1, eta=0: log P(0 | Poisson(1)) = -1 per observation
        let ll = loglik_poisson(&[0, 0], &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((ll + 2.0).abs() < 1e-12);
        // y=2, e=1, eta=0: -1 - ln 2
        let ll = loglik_poisson(&[2], &[1.0], &[0.0]).unwrap();
        assert!((ll - (-1.0 - 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn poisson_loglik_matches_pmf_oracle() {
        // textbook pmf: P(y) = (m^y e^-m) / y!, m = e * exp(eta)
        let y = [3_u64, 0, 7, 1];
        let e = [0.5, 2.0, 1.5, 3.0];
        let eta = [0.2, -0.4, 1.1, 0.0];
        let ll = loglik_poisson(&y, &e, &eta).unwrap();
        let mut oracle = 0.0;
        for i in 0..y.len() {
            let m = e[i] * eta[i].exp();
            let mut fact = 1.0;
            for k in 1..=y[i] {
                fact *= k as f64;
            }
            oracle += (m.powi(y[i] as i32) * (-m).exp() / fact).ln();
        }
        assert!((ll - oracle).abs() < 1e-12);
    }

    #[test]
    fn exposure_density_at_mean() {
        let n = 6;
        let data = tiny_dataset(n);
        let spec = ModelSpec::new(Variant::ClassicalMe);
        let mut state = LatentState::initial(&spec, &data);
        state.tau_eps = 2.0;
        state.alpha[0] = 0.3;
        state.x = vec![0.3; n];
        let v = exposure_logdensity(&state, &data);
        let want = 0.5 * n as f64 * (2.0_f64.ln() - LN_2PI);
        assert!((v - want).abs() < 1e-12);
        // one unit residual at tau=1 subtracts 1/2
        state.tau_eps = 1.0;
        state.x[0] += 1.0;
        let v = exposure_logdensity(&state, &data);
        let want = 0.5 * n as f64 * (0.0 - LN_2PI) - 0.5;
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn error_density_zero_residual() {
        let n = 4;
        let data = tiny_dataset(n);
        let spec = ModelSpec::new(Variant::SpatialMe);
        let mut state = LatentState::initial(&spec, &data);
        state.tau_u = 3.0;
        // classical: w = x
        state.x = data.w.clone();
        let v = error_logdensity(&state, &data, Variant::ClassicalMe);
        let want = 0.5 * n as f64 * (3.0_f64.ln() - LN_2PI);
        assert!((v - want).abs() < 1e-12);
        // spatial: w = x + phi
        state.phi = vec![0.25; n];
        state.x = data.w.iter().map(|&wi| wi - 0.25).collect();
        let v = error_logdensity(&state, &data, Variant::SpatialMe);
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn joint_is_sum_of_components() {
        let n = 10;
        let data = tiny_dataset(n);
        let icar = path_icar(n);
        for variant in [Variant::Baseline, Variant::ClassicalMe, Variant::SpatialMe] {
            let spec = ModelSpec::new(variant);
            let mut state = LatentState::initial(&spec, &data);
            randomize(&mut state, &icar, 17);
            let joint = joint_logposterior(&state, &data, &spec, &icar).unwrap();
            let mut sum = 0.0;
            let eta = linear_predictor(&state, &data, variant).unwrap();
            sum += loglik_poisson(&data.y, &data.e, &eta).unwrap();
            if variant.has_measurement_error() {
                sum += exposure_logdensity(&state, &data);
                sum += error_logdensity(&state, &data, variant);
                sum += spec.priors.tau_eps.logdensity(state.tau_eps);
                sum += spec.priors.tau_u.logdensity(state.tau_u);
            }
            sum += icar.logdensity(&state.theta, state.tau_theta).unwrap();
            sum += spec.priors.tau_theta.logdensity(state.tau_theta);
            if variant.has_spatial_error() {
                sum += icar.logdensity(&state.phi, state.tau_phi).unwrap();
                sum += spec.priors.tau_phi.logdensity(state.tau_phi);
            }
            for (j, b) in state.beta.iter().enumerate() {
                sum += spec.priors.beta_prior(j).logdensity(*b);
            }
            for a in &state.alpha {
                sum += spec.priors.fixed_effects.logdensity(*a);
            }
            assert!(
                (joint - sum).abs() < 1e-10,
                "{variant:?}: {joint} vs {sum}"
            );
        }
    }

    #[test]
    fn empty_data_reduces_to_priors() {
        let data = Dataset::new(
            vec![],
            vec![],
            vec![],
            "traffic",
            Standardization::identity(),
            DesignMatrix::empty(0),
            DesignMatrix::empty(0),
        )
        .unwrap();
        let icar = path_icar(2);
        let mut spec = ModelSpec::new(Variant::Baseline);
        spec.include_spatial_theta = false;
        let mut state = LatentState::initial(&spec, &data);
        state.beta = vec![0.7, -0.3];
        let joint = joint_logposterior(&state, &data, &spec, &icar).unwrap();
        let want: f64 = state
            .beta
            .iter()
            .enumerate()
            .map(|(j, b)| spec.priors.beta_prior(j).logdensity(*b))
            .sum();
        assert!((joint - want).abs() < 1e-12);
    }

    #[test]
    fn baseline_ignores_me_state() {
        let n = 8;
        let data = tiny_dataset(n);
        let icar = path_icar(n);
        let spec = ModelSpec::new(Variant::Baseline);
        let mut state = LatentState::initial(&spec, &data);
        randomize(&mut state, &icar, 3);
        let v0 = joint_logposterior(&state, &data, &spec, &icar).unwrap();
        state.x = vec![9.0; n];
        state.alpha = vec![4.0, -2.0];
        state.phi = vec![1.0; n];
        state.tau_eps = 0.01;
        state.tau_u = 77.0;
        state.tau_phi = 1e-3;
        let v1 = joint_logposterior(&state, &data, &spec, &icar).unwrap();
        assert_eq!(v0, v1);
    }

    #[test]
    fn zero_slope_makes_poisson_invariant_to_x() {
        let n = 8;
        let data = tiny_dataset(n);
        let spec = ModelSpec::new(Variant::ClassicalMe);
        let mut state = LatentState::initial(&spec, &data);
        state.beta[1] = 0.0;
        let eta0 = linear_predictor(&state, &data, Variant::ClassicalMe).unwrap();
        for xi in &mut state.x {
            *xi += 3.0;
        }
        let eta1 = linear_predictor(&state, &data, Variant::ClassicalMe).unwrap();
        assert_eq!(eta0, eta1);
    }

    fn randomize(state: &mut LatentState, icar: &IcarStructure, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for b in &mut state.beta {
            *b = rng.gen_range(-0.5..0.5);
        }
        for a in &mut state.alpha {
            *a = rng.gen_range(-0.5..0.5);
        }
        for v in state.theta.iter_mut().chain(state.phi.iter_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        if !state.theta.is_empty() {
            icar.project_sum_to_zero(&mut state.theta);
        }
        if !state.phi.is_empty() {
            icar.project_sum_to_zero(&mut state.phi);
        }
        for xi in &mut state.x {
            *xi += rng.gen_range(-0.3..0.3);
        }
        state.tau_theta = rng.gen_range(0.5..2.0);
        state.tau_eps = rng.gen_range(0.5..2.0);
        state.tau_u = rng.gen_range(0.5..2.0);
        state.tau_phi = rng.gen_range(0.5..2.0);
    }
}
