//! Stacked pseudo-observation form of the measurement-error hierarchy.
//!
//! The ME models can be rewritten so that every equation contributes a
//! block of observations:
//!
//! ```text
//! y_i                     (outcome equation)
//! 0  = -x_i + mu_i + eps_i (exposure equation, zero pseudo-observations)
//! w_i = x_i (+ phi_i) + u_i (error equation)
//! ```
//!
//! giving a response matrix with one column per equation and 3n rows.
//! The sampler in this crate works on the hierarchical form directly;
//! this module documents the stacked formulation and backs the
//! Gaussian-surrogate cross-checks, which verify that the Gaussian rows
//! reproduce the exposure and error log-densities exactly.

use crate::model::{exposure_mean, Dataset, LatentState, ModelSpec};

const LN_2PI: f64 = 1.8378770664093453;

/// Which equation a stacked row belongs to, and which observation it
/// came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedRow {
    /// 0 = outcome, 1 = exposure (zero pseudo-observation), 2 = error.
    pub equation: usize,
    pub obs: usize,
}

/// Response matrix with one column per model equation. Entry (row, eq)
/// is `Some(response)` exactly when the row belongs to that equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub n: usize,
    pub n_equations: usize,
    pub rows: Vec<AugmentedRow>,
    pub responses: Vec<Vec<Option<f64>>>,
}

/// Stack the response matrix for `spec`: 3n rows for the ME variants
/// ([y | 0 | w]), the single-column n-row degenerate case for the
/// baseline.
pub fn build_augmented_system(data: &Dataset, spec: &ModelSpec) -> AugmentedSystem {
    let n = data.len();
    if !spec.variant.has_measurement_error() {
        let rows = (0..n).map(|obs| AugmentedRow { equation: 0, obs }).collect();
        let responses = data.y.iter().map(|&y| vec![Some(y as f64)]).collect();
        return AugmentedSystem {
            n,
            n_equations: 1,
            rows,
            responses,
        };
    }
    let mut rows = Vec::with_capacity(3 * n);
    let mut responses = Vec::with_capacity(3 * n);
    for (obs, &y) in data.y.iter().enumerate() {
        rows.push(AugmentedRow { equation: 0, obs });
        responses.push(vec![Some(y as f64), None, None]);
    }
    for obs in 0..n {
        rows.push(AugmentedRow { equation: 1, obs });
        responses.push(vec![None, Some(0.0), None]);
    }
    for (obs, &w) in data.w.iter().enumerate() {
        rows.push(AugmentedRow { equation: 2, obs });
        responses.push(vec![None, None, Some(w)]);
    }
    AugmentedSystem {
        n,
        n_equations: 3,
        rows,
        responses,
    }
}

impl AugmentedSystem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Log-density of the Gaussian equation blocks at `state`:
    /// the exposure rows evaluate N(0; -x_i + mu_i, 1/tau_eps), the error
    /// rows N(w_i; x_i (+ phi_i), 1/tau_u). Equals
    /// `exposure_logdensity + error_logdensity` of the hierarchical form.
    pub fn gaussian_logdensity(
        &self,
        state: &LatentState,
        data: &Dataset,
        spec: &ModelSpec,
    ) -> f64 {
        let mut total = 0.0;
        for (row, resp) in self.rows.iter().zip(&self.responses) {
            match row.equation {
                1 => {
                    let observed = resp[1].expect("exposure row carries a response");
                    let mean = -state.x[row.obs] + exposure_mean(state, data, row.obs);
                    total += log_normal(observed, mean, state.tau_eps);
                }
                2 => {
                    let observed = resp[2].expect("error row carries a response");
                    let mut mean = state.x[row.obs];
                    if spec.variant.has_spatial_error() {
                        mean += state.phi[row.obs];
                    }
                    total += log_normal(observed, mean, state.tau_u);
                }
                _ => {}
            }
        }
        total
    }
}

fn log_normal(x: f64, mean: f64, tau: f64) -> f64 {
    0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * (x - mean) * (x - mean)
}
