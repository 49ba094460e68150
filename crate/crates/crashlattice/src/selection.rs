//! Model comparison and posterior summaries.
//!
//! DIC uses the conditional Poisson deviance (the likelihood given all
//! latent fields) with the posterior mean of every latent coordinate as
//! the plug-in state; WAIC uses the pointwise log-predictive density
//! accumulated in log space. Both conventions are fixed here so that
//! numbers are comparable across the model variants fitted by this
//! crate, but not naively against other software.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::PosteriorSamples;
use crate::model::{linear_predictor, poisson_term, Dataset, ModelError, ModelSpec};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no posterior draws")]
    Empty,
    #[error("WAIC requires at least 2 posterior draws")]
    TooFewDraws,
    #[error("non-finite deviance at draw {draw}")]
    NonFiniteDeviance { draw: usize },
    #[error("non-finite pointwise likelihood at observation {index}")]
    NonFiniteObservation { index: usize },
    #[error("covariate sd must be positive, got {sd}")]
    NonPositiveSd { sd: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub dic: f64,
    pub p_d: f64,
    pub dbar: f64,
}

/// Deviance information criterion: D(s) = -2 loglik, DIC = Dbar + p_D
/// with p_D = Dbar - D(posterior-mean state).
pub fn dic(
    samples: &PosteriorSamples,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<DicResult, SelectionError> {
    let mut dbar = 0.0;
    let mut count = 0usize;
    for state in samples.states() {
        let d = deviance(&state, data, spec).map_err(|_| SelectionError::NonFiniteDeviance {
            draw: count,
        })?;
        dbar += d;
        count += 1;
    }
    if count == 0 {
        return Err(SelectionError::Empty);
    }
    dbar /= count as f64;
    let plug_in = samples.mean_state();
    let d_hat = deviance(&plug_in, data, spec)
        .map_err(|_| SelectionError::NonFiniteDeviance { draw: count })?;
    let p_d = dbar - d_hat;
    Ok(DicResult {
        dic: dbar + p_d,
        p_d,
        dbar,
    })
}

fn deviance(
    state: &crate::model::LatentState,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<f64, ModelError> {
    let eta = linear_predictor(state, data, spec.variant)?;
    let ll = crate::model::loglik_poisson(&data.y, &data.e, &eta)?;
    Ok(-2.0 * ll)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaicResult {
    pub waic: f64,
    pub p_waic: f64,
    pub lppd: f64,
}

/// Watanabe-Akaike information criterion from pointwise log-likelihoods;
/// lppd is accumulated with an online log-sum-exp and the penalty is the
/// pointwise variance of log p(y_i | s).
pub fn waic(
    samples: &PosteriorSamples,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<WaicResult, SelectionError> {
    let n = data.len();
    let mut max_lp = vec![f64::NEG_INFINITY; n];
    let mut sum_exp = vec![0.0_f64; n];
    let mut mean_lp = vec![0.0_f64; n];
    let mut m2_lp = vec![0.0_f64; n];
    let mut count = 0usize;

    for state in samples.states() {
        let eta =
            linear_predictor(&state, data, spec.variant).map_err(SelectionError::from)?;
        count += 1;
        for i in 0..n {
            let lp = poisson_term(data.y[i], data.e[i], eta[i]);
            if !lp.is_finite() {
                return Err(SelectionError::NonFiniteObservation { index: i });
            }
            // online log-sum-exp
            if lp > max_lp[i] {
                sum_exp[i] = sum_exp[i] * (max_lp[i] - lp).exp() + 1.0;
                max_lp[i] = lp;
            } else {
                sum_exp[i] += (lp - max_lp[i]).exp();
            }
            // Welford for the pointwise variance
            let delta = lp - mean_lp[i];
            mean_lp[i] += delta / count as f64;
            m2_lp[i] += delta * (lp - mean_lp[i]);
        }
    }
    if count < 2 {
        return Err(SelectionError::TooFewDraws);
    }
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for i in 0..n {
        lppd += max_lp[i] + sum_exp[i].ln() - (count as f64).ln();
        p_waic += m2_lp[i] / (count as f64 - 1.0);
    }
    Ok(WaicResult {
        waic: -2.0 * (lppd - p_waic),
        p_waic,
        lppd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Posterior mean, sd, and central 90% interval per scalar parameter,
/// pooled across chains. Deterministic given the samples.
pub fn summarize(samples: &PosteriorSamples) -> Result<Vec<ParameterSummary>, SelectionError> {
    if samples.n_kept_total() == 0 {
        return Err(SelectionError::Empty);
    }
    Ok(samples
        .scalar_names
        .iter()
        .enumerate()
        .map(|(idx, name)| {
            let draws = samples.pooled_scalar(idx);
            let (mean, sd) = mean_sd(&draws);
            let mut sorted = draws;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ParameterSummary {
                name: name.clone(),
                mean,
                sd,
                q05: quantile_sorted(&sorted, 0.05),
                q95: quantile_sorted(&sorted, 0.95),
            }
        })
        .collect())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Type-7 (linear interpolation) quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() as f64 - 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaSummary {
    pub mean: f64,
    pub low90: f64,
    pub high90: f64,
}

/// Per-segment posterior summaries of the event rate lambda_i =
/// exp(eta_i).
pub fn lambda_summaries(
    samples: &PosteriorSamples,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<Vec<LambdaSummary>, SelectionError> {
    let n = data.len();
    let total = samples.n_kept_total();
    if total == 0 {
        return Err(SelectionError::Empty);
    }
    let mut per_segment: Vec<Vec<f64>> = vec![Vec::with_capacity(total); n];
    for state in samples.states() {
        let eta = linear_predictor(&state, data, spec.variant)?;
        for i in 0..n {
            per_segment[i].push(eta[i].exp());
        }
    }
    Ok(per_segment
        .into_iter()
        .map(|mut draws| {
            let (mean, _) = mean_sd(&draws);
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            LambdaSummary {
                mean,
                low90: quantile_sorted(&draws, 0.05),
                high90: quantile_sorted(&draws, 0.95),
            }
        })
        .collect())
}

/// Full fit summary: parameter table, information criteria, per-segment
/// rates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub parameters: Vec<ParameterSummary>,
    pub dic: DicResult,
    pub waic: WaicResult,
    pub lambda: Vec<LambdaSummary>,
}

pub fn fit_summary(
    samples: &PosteriorSamples,
    data: &Dataset,
    spec: &ModelSpec,
) -> Result<FitSummary, SelectionError> {
    Ok(FitSummary {
        parameters: summarize(samples)?,
        dic: dic(samples, data, spec)?,
        waic: waic(samples, data, spec)?,
        lambda: lambda_summaries(samples, data, spec)?,
    })
}

/// Rate ratio for an increment on the original covariate scale:
/// exp(beta_std * delta / sd), where beta_std is the coefficient on the
/// standardised scale and sd the original standard deviation.
pub fn rate_ratio(
    beta_std: f64,
    delta_original: f64,
    covariate_sd: f64,
) -> Result<f64, SelectionError> {
    if !(covariate_sd > 0.0) {
        return Err(SelectionError::NonPositiveSd { sd: covariate_sd });
    }
    Ok((beta_std * delta_original / covariate_sd).exp())
}

/// One row of the predicted-vs-observed count-class table; counts of 11
/// or more are lumped into the "11+" class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountClassRow {
    pub class: String,
    pub observed_segments: usize,
    pub observed_share: f64,
    pub predicted_segments: usize,
    pub predicted_share: f64,
    pub mean_predicted: f64,
}

/// Distribution of observed counts and of posterior-mean predicted
/// counts (e_i times the posterior mean of lambda_i) over the count
/// classes 0..10 and 11+.
pub fn count_class_table(
    lambda: &[LambdaSummary],
    data: &Dataset,
) -> Result<Vec<CountClassRow>, SelectionError> {
    let n = data.len();
    if lambda.len() != n {
        return Err(SelectionError::Model(ModelError::DimensionMismatch {
            what: "lambda summaries",
            expected: n,
            got: lambda.len(),
        }));
    }
    const LUMP: usize = 11;
    let class_of = |c: usize| c.min(LUMP);
    let mut observed = vec![0usize; LUMP + 1];
    let mut predicted = vec![0usize; LUMP + 1];
    let mut predicted_sum = vec![0.0_f64; LUMP + 1];
    for i in 0..n {
        let obs_class = class_of(data.y[i] as usize);
        observed[obs_class] += 1;
        let pred = data.e[i] * lambda[i].mean;
        predicted[class_of(pred.round() as usize)] += 1;
        predicted_sum[obs_class] += pred;
    }
    Ok((0..=LUMP)
        .map(|c| {
            let label = if c == LUMP {
                "11+".to_string()
            } else {
                c.to_string()
            };
            CountClassRow {
                class: label,
                observed_segments: observed[c],
                observed_share: observed[c] as f64 / n as f64,
                predicted_segments: predicted[c],
                predicted_share: predicted[c] as f64 / n as f64,
                mean_predicted: if observed[c] > 0 {
                    predicted_sum[c] / observed[c] as f64
                } else {
                    f64::NAN
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_ratio_reproduces_reported_arithmetic() {
        // increments of 100,000 annual traffic units against an original
        // sd of 700,000
        let cases = [(0.319, 1.046), (3.990, 1.768), (7.956, 3.116)];
        for (beta, want) in cases {
            let got = rate_ratio(beta, 100_000.0, 700_000.0).unwrap();
            assert!((got - want).abs() <= 0.001, "beta {beta}: {got} vs {want}");
        }
    }

    #[test]
    fn rate_ratio_null_increment_is_one() {
        assert_eq!(rate_ratio(12.3, 0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn rate_ratio_reciprocal_identity() {
        let a = rate_ratio(0.77, 2.5, 1.3).unwrap();
        let b = rate_ratio(0.77, -2.5, 1.3).unwrap();
        assert!((a * b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_ratio_rejects_bad_sd() {
        assert!(matches!(
            rate_ratio(1.0, 1.0, 0.0),
            Err(SelectionError::NonPositiveSd { .. })
        ));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-12);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }
}
