//! Synthetic data generation and scripted experiments.
//!
//! Programmatic lattices (grids and paths) stand in for real road
//! networks; datasets are drawn forward from the generative hierarchy so
//! that recovery, attenuation, and model-selection behaviour can be
//! scored against known truth. Generated proxies stay on the generative
//! scale (identity standardisation), which keeps true coefficients
//! directly comparable with fitted ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmrf::{GmrfError, IcarStructure};
use crate::inference::{run_mcmc, InferenceError, SamplerConfig};
use crate::lattice::{LatticeError, Segment, SegmentNetwork};
use crate::model::{
    Column, Dataset, DesignMatrix, LatentState, ModelError, ModelSpec, Standardization, Variant,
    ETA_GUARD,
};
use crate::selection::{dic, summarize, waic, SelectionError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Gmrf(#[from] GmrfError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error("invalid scenario: {reason}")]
    InvalidScenario { reason: String },
    #[error("generated rate overflows at site {index} (eta = {eta}); use smaller coefficients or offsets")]
    RateOverflow { index: usize, eta: f64 },
}

/// Which programmatic lattice to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatticeSpec {
    Grid { rows: usize, cols: usize },
    Path { n: usize },
}

/// How to generate segment offsets. The lognormal policy draws lengths
/// in meters and scales them to kilometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OffsetPolicy {
    Constant { value: f64 },
    LognormalMeters { log_mean: f64, sigma: f64 },
}

/// A complete generative configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub lattice: LatticeSpec,
    pub variant: Variant,
    /// Regression coefficients: intercept, proxy/latent slope, then one
    /// per error-free covariate.
    pub beta: Vec<f64>,
    /// Exposure coefficients (ME variants): intercept, then one per
    /// exposure covariate.
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default = "one")]
    pub tau_theta: f64,
    #[serde(default = "one")]
    pub tau_eps: f64,
    #[serde(default = "one")]
    pub tau_u: f64,
    #[serde(default = "one")]
    pub tau_phi: f64,
    /// Number of error-free regression covariates (iid standard normal).
    #[serde(default)]
    pub n_z: usize,
    /// Number of exposure-model covariates (iid standard normal).
    #[serde(default)]
    pub n_ztilde: usize,
    pub offsets: OffsetPolicy,
    #[serde(default = "default_true")]
    pub include_spatial_theta: bool,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |reason: String| Err(SimError::InvalidScenario { reason });
        match self.lattice {
            LatticeSpec::Grid { rows, cols } if rows < 2 || cols < 2 => {
                return invalid(format!("grid must be at least 2x2, got {rows}x{cols}"));
            }
            LatticeSpec::Path { n } if n < 2 => {
                return invalid(format!("path must have at least 2 sites, got {n}"));
            }
            _ => {}
        }
        if self.beta.len() != 2 + self.n_z {
            return invalid(format!(
                "beta must have 2 + n_z = {} entries, got {}",
                2 + self.n_z,
                self.beta.len()
            ));
        }
        if self.variant.has_measurement_error() && self.alpha.len() != 1 + self.n_ztilde {
            return invalid(format!(
                "alpha must have 1 + n_ztilde = {} entries, got {}",
                1 + self.n_ztilde,
                self.alpha.len()
            ));
        }
        for (name, tau) in [
            ("tau_theta", self.tau_theta),
            ("tau_eps", self.tau_eps),
            ("tau_u", self.tau_u),
            ("tau_phi", self.tau_phi),
        ] {
            if !(tau > 0.0) {
                return invalid(format!("{name} must be positive, got {tau}"));
            }
        }
        match self.offsets {
            OffsetPolicy::Constant { value } if !(value > 0.0) => {
                return invalid(format!("constant offset must be positive, got {value}"));
            }
            OffsetPolicy::LognormalMeters { sigma, .. } if !(sigma >= 0.0) => {
                return invalid(format!("offset sigma must be nonnegative, got {sigma}"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<SegmentNetwork, SimError> {
        Ok(match self.lattice {
            LatticeSpec::Grid { rows, cols } => make_grid_lattice(rows, cols)?,
            LatticeSpec::Path { n } => make_path_lattice(n)?,
        })
    }
}

/// Rook-adjacency grid of unit-length pseudo-segments, one per cell;
/// always a single connected component.
pub fn make_grid_lattice(rows: usize, cols: usize) -> Result<SegmentNetwork, LatticeError> {
    let mut segments = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            segments.push(Segment::new(
                format!("g{r}_{c}"),
                vec![[c as f64, r as f64], [c as f64 + 1.0, r as f64]],
                "sim",
                50.0,
            )?);
        }
    }
    let mut edges = Vec::new();
    let site = |r: usize, c: usize| r * cols + c;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((site(r, c), site(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((site(r, c), site(r + 1, c)));
            }
        }
    }
    SegmentNetwork::from_parts(segments, edges)
}

/// Path lattice of unit pseudo-segments.
pub fn make_path_lattice(n: usize) -> Result<SegmentNetwork, LatticeError> {
    let segments = (0..n)
        .map(|i| {
            Segment::new(
                format!("p{i}"),
                vec![[i as f64, 0.0], [i as f64 + 1.0, 0.0]],
                "sim",
                50.0,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edges: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    SegmentNetwork::from_parts(segments, edges)
}

/// Draw a dataset from the scenario's generative hierarchy. Returns the
/// data together with the true latent state for recovery scoring.
pub fn simulate_dataset(scenario: &SimScenario) -> Result<(Dataset, LatentState), SimError> {
    scenario.validate()?;
    let network = scenario.build_network()?;
    let icar = IcarStructure::from_network(&network)?;
    let n = network.len();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let me = scenario.variant.has_measurement_error();
    let spatial = scenario.variant.has_spatial_error();

    let e: Vec<f64> = match scenario.offsets {
        OffsetPolicy::Constant { value } => vec![value; n],
        OffsetPolicy::LognormalMeters { log_mean, sigma } => (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (log_mean + sigma * z).exp() / 1000.0
            })
            .collect(),
    };

    let draw_columns = |rng: &mut ChaCha8Rng, count: usize, prefix: &str| {
        (0..count)
            .map(|j| {
                let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Column::numeric_standardized(format!("{prefix}{}", j + 1), &raw)
            })
            .collect::<Vec<_>>()
    };
    let z = DesignMatrix::from_columns(draw_columns(&mut rng, scenario.n_z, "z"))?;
    let ztilde = DesignMatrix::from_columns(draw_columns(&mut rng, scenario.n_ztilde, "zt"))?;

    let theta = if scenario.include_spatial_theta {
        icar.sample_constrained(scenario.tau_theta, &mut rng)
    } else {
        Vec::new()
    };
    let phi = if spatial {
        icar.sample_constrained(scenario.tau_phi, &mut rng)
    } else {
        Vec::new()
    };

    let (x, w): (Vec<f64>, Vec<f64>) = if me {
        let sd_eps = scenario.tau_eps.powf(-0.5);
        let sd_u = scenario.tau_u.powf(-0.5);
        let mut xs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for i in 0..n {
            let mut mu = scenario.alpha[0];
            for (j, col) in ztilde.columns().iter().enumerate() {
                mu += scenario.alpha[1 + j] * col.values[i];
            }
            let x_i = mu + sd_eps * rng.sample::<f64, _>(StandardNormal);
            let mut w_i = x_i + sd_u * rng.sample::<f64, _>(StandardNormal);
            if spatial {
                w_i += phi[i];
            }
            xs.push(x_i);
            ws.push(w_i);
        }
        (xs, ws)
    } else {
        let ws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        (Vec::new(), ws)
    };

    let covariate: &[f64] = if me { &x } else { &w };
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut eta = scenario.beta[0] + scenario.beta[1] * covariate[i];
        for (j, col) in z.columns().iter().enumerate() {
            eta += scenario.beta[2 + j] * col.values[i];
        }
        if scenario.include_spatial_theta {
            eta += theta[i];
        }
        if !eta.is_finite() || eta.abs() > ETA_GUARD {
            return Err(SimError::RateOverflow { index: i, eta });
        }
        let mean = e[i] * eta.exp();
        let count = if mean > 0.0 {
            rng.sample(Poisson::new(mean).expect("positive mean"))
        } else {
            0.0
        };
        y.push(count as u64);
    }

    let data = Dataset::new(
        y,
        e,
        w,
        "traffic",
        Standardization::identity(),
        z,
        ztilde,
    )?;
    let truth = LatentState {
        beta: scenario.beta.clone(),
        alpha: if me { scenario.alpha.clone() } else { Vec::new() },
        theta,
        x,
        phi,
        tau_theta: scenario.tau_theta,
        tau_eps: scenario.tau_eps,
        tau_u: scenario.tau_u,
        tau_phi: scenario.tau_phi,
    };
    Ok((data, truth))
}

/// Fit of one variant within an attenuation experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub slope_mean: f64,
    pub slope_sd: f64,
    pub slope_low90: f64,
    pub slope_high90: f64,
    /// Whether the central 90% interval covers the generative slope.
    pub covers_truth: bool,
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttenuationReport {
    pub truth_slope: f64,
    pub models: Vec<VariantReport>,
}

/// Simulate once from the scenario (which should be an ME-generating
/// variant), then fit the baseline, classical-ME, and spatial-ME models
/// on the same data; report the proxy-slope posterior per model plus
/// DIC/WAIC.
pub fn attenuation_experiment(
    scenario: &SimScenario,
    config: &SamplerConfig,
) -> Result<AttenuationReport, SimError> {
    if !scenario.variant.has_measurement_error() {
        return Err(SimError::InvalidScenario {
            reason: "attenuation experiments need an ME-generating variant".into(),
        });
    }
    let (data, truth) = simulate_dataset(scenario)?;
    let network = scenario.build_network()?;
    let icar = IcarStructure::from_network(&network)?;
    let truth_slope = truth.beta[1];

    let mut models = Vec::new();
    for variant in [Variant::Baseline, Variant::ClassicalMe, Variant::SpatialMe] {
        let spec = ModelSpec::new(variant);
        let samples = run_mcmc(&data, &spec, &icar, config)?;
        let table = summarize(&samples)?;
        let slope = &table[1];
        let dic_res = dic(&samples, &data, &spec)?;
        let waic_res = waic(&samples, &data, &spec)?;
        models.push(VariantReport {
            variant,
            slope_mean: slope.mean,
            slope_sd: slope.sd,
            slope_low90: slope.q05,
            slope_high90: slope.q95,
            covers_truth: slope.q05 <= truth_slope && truth_slope <= slope.q95,
            dic: dic_res.dic,
            p_d: dic_res.p_d,
            waic: waic_res.waic,
            p_waic: waic_res.p_waic,
        });
    }
    Ok(AttenuationReport {
        truth_slope,
        models,
    })
}
