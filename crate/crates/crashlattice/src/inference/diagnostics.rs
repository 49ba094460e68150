//! Convergence diagnostics: rank-normalised split R-hat, bulk effective
//! sample size, and the Monte Carlo standard error of posterior means.

use statrs::distribution::{ContinuousCDF, Normal};

use super::PosteriorSamples;

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub ess_bulk: f64,
    /// None with a single chain (and for degenerate chains).
    pub rhat: Option<f64>,
    pub mcse: f64,
    /// Constant chains: ESS and R-hat are meaningless.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub parameters: Vec<ParameterDiagnostics>,
    /// R-hat was omitted because only one chain was run.
    pub single_chain: bool,
}

/// Rank-normalised split R-hat and bulk ESS for every scalar parameter.
pub fn diagnostics(samples: &PosteriorSamples) -> DiagnosticsReport {
    let single_chain = samples.n_chains() < 2;
    let parameters = samples
        .scalar_names
        .iter()
        .enumerate()
        .map(|(idx, name)| {
            let chains = samples.scalar_chains(idx);
            let (ess, rhat, mcse, degenerate) = scalar_diagnostics(&chains);
            ParameterDiagnostics {
                name: name.clone(),
                ess_bulk: ess,
                rhat: if single_chain { None } else { rhat },
                mcse,
                degenerate,
            }
        })
        .collect();
    DiagnosticsReport {
        parameters,
        single_chain,
    }
}

/// (bulk ESS, split R-hat, MCSE of the mean, degenerate flag) for one
/// scalar given its per-chain draws.
pub(crate) fn scalar_diagnostics(chains: &[Vec<f64>]) -> (f64, Option<f64>, f64, bool) {
    let sequences = split_chains(chains);
    if sequences.is_empty() || sequences[0].len() < 4 {
        return (f64::NAN, None, f64::NAN, true);
    }
    let pooled: Vec<f64> = sequences.iter().flatten().copied().collect();
    let pooled_sd = sample_sd(&pooled);
    if pooled_sd == 0.0 || !pooled_sd.is_finite() {
        return (0.0, None, 0.0, true);
    }
    let normalized = rank_normalize(&sequences);
    let rhat = split_rhat(&normalized);
    let ess = bulk_ess(&normalized);
    let mcse = pooled_sd / ess.sqrt();
    (ess, rhat, mcse, false)
}

fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for c in chains {
        let half = c.len() / 2;
        if half >= 2 {
            out.push(c[..half].to_vec());
            out.push(c[half..2 * half].to_vec());
        }
    }
    out
}

/// Average ranks across the pooled draws mapped through the standard
/// normal quantile function (the (r - 3/8)/(N + 1/4) convention).
fn rank_normalize(sequences: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_total: usize = sequences.iter().map(Vec::len).sum();
    let mut indexed: Vec<(f64, usize)> = sequences
        .iter()
        .flatten()
        .copied()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ranks = vec![0.0; n_total];
    let mut i = 0;
    while i < indexed.len() {
        let mut j = i;
        while j + 1 < indexed.len() && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[indexed[k].1] = avg_rank;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(sequences.len());
    let mut flat = 0;
    for seq in sequences {
        let z: Vec<f64> = seq
            .iter()
            .map(|_| {
                let r = ranks[flat];
                flat += 1;
                normal.inverse_cdf((r - 0.375) / (n_total as f64 + 0.25))
            })
            .collect();
        out.push(z);
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    sample_var(v).sqrt()
}

fn split_rhat(sequences: &[Vec<f64>]) -> Option<f64> {
    if sequences.len() < 2 {
        return None;
    }
    let n = sequences[0].len() as f64;
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let w = mean(&sequences.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    if w <= 0.0 {
        return None;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Bulk ESS via per-sequence autocovariances combined with Geyer's
/// initial monotone positive sequence.
fn bulk_ess(sequences: &[Vec<f64>]) -> f64 {
    let m = sequences.len();
    let n = sequences[0].len();
    let w = mean(&sequences.iter().map(|s| sample_var(s)).collect::<Vec<_>>());
    let means: Vec<f64> = sequences.iter().map(|s| mean(s)).collect();
    let var_plus = if m > 1 {
        (n as f64 - 1.0) / n as f64 * w + sample_var(&means)
    } else {
        (n as f64 - 1.0) / n as f64 * w
    };
    if var_plus <= 0.0 {
        return 0.0;
    }

    // autocovariance at lag t averaged over sequences (biased 1/n)
    let autocov = |t: usize| -> f64 {
        let mut acc = 0.0;
        for (seq, mu) in sequences.iter().zip(&means) {
            let mut c = 0.0;
            for i in 0..n - t {
                c += (seq[i] - mu) * (seq[i + t] - mu);
            }
            acc += c / n as f64;
        }
        acc / m as f64
    };

    // Geyer pairs P_k = rho_{2k} + rho_{2k+1} (rho_0 = 1), summed while
    // positive and forced nonincreasing.
    let mut pair_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let r_even = if k == 0 {
            1.0
        } else {
            1.0 - (w - autocov(2 * k)) / var_plus
        };
        let r_odd = 1.0 - (w - autocov(2 * k + 1)) / var_plus;
        let mut pair = r_even + r_odd;
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        prev_pair = pair;
        pair_sum += pair;
        k += 1;
    }
    let tau = (2.0 * pair_sum - 1.0).max(0.01);
    (m * n) as f64 / tau
}
