//! Simulation-study validation: generative moments against lognormal
//! algebra, the no-measurement-error limit, and recovery calibration.

mod common;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crashlattice::gmrf::IcarStructure;
use crashlattice::inference::{run_mcmc, SamplerConfig};
use crashlattice::model::{ModelSpec, Variant};
use crashlattice::selection::summarize;
use crashlattice::sim::{
    make_path_lattice, simulate_dataset, LatticeSpec, OffsetPolicy, SimScenario,
};

// The attenuation benchmark: no spatial field in the generative model,
// so the proxy slope is the only signal and the linear-theory
// attenuation factor applies cleanly.
fn me_scenario(rows: usize, cols: usize, seed: u64) -> SimScenario {
    SimScenario {
        lattice: LatticeSpec::Grid { rows, cols },
        variant: Variant::ClassicalMe,
        beta: vec![0.3, 1.0],
        alpha: vec![0.0],
        tau_theta: 4.0,
        tau_eps: 1.0,
        tau_u: 1.0,
        tau_phi: 1.0,
        n_z: 0,
        n_ztilde: 0,
        offsets: OffsetPolicy::Constant { value: 1.0 },
        include_spatial_theta: false,
        seed,
    }
}

#[test]
fn simulated_count_means_match_lognormal_moment_oracle() {
    // For eta = b0 + b1 x + theta with x ~ N(a0, 1/tau_eps) and theta the
    // constrained ICAR field, E[y_i] = e * exp(b0 + b1 a0) *
    // exp(b1^2/(2 tau_eps)) * exp(Kplus_ii / (2 tau_theta)).
    let n = 8;
    let base = SimScenario {
        lattice: LatticeSpec::Path { n },
        variant: Variant::ClassicalMe,
        beta: vec![0.2, 0.6],
        alpha: vec![0.1],
        tau_theta: 2.0,
        tau_eps: 1.4,
        tau_u: 1.0,
        tau_phi: 1.0,
        n_z: 0,
        n_ztilde: 0,
        offsets: OffsetPolicy::Constant { value: 1.5 },
        include_spatial_theta: true,
        seed: 0,
    };

    // marginal ICAR variances from the pseudo-inverse identity
    // (K + J/n)^{-1} - J/n
    let network = make_path_lattice(n).unwrap();
    let icar = IcarStructure::from_network(&network).unwrap();
    let mut m = icar.structure_matrix().to_dense();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += 1.0 / n as f64;
        }
    }
    let kplus: DMatrix<f64> = m.try_inverse().unwrap()
        - DMatrix::from_element(n, n, 1.0 / n as f64);

    let n_reps = 200;
    let mut rep_means = Vec::with_capacity(n_reps);
    for rep in 0..n_reps {
        let mut scenario = base.clone();
        scenario.seed = 1000 + rep as u64;
        let (data, _) = simulate_dataset(&scenario).unwrap();
        rep_means.push(
            data.y.iter().map(|&y| y as f64).sum::<f64>() / n as f64,
        );
    }
    let grand_mean = common::mean(&rep_means);
    let se = (common::sample_variance(&rep_means) / n_reps as f64).sqrt();

    let analytic: f64 = (0..n)
        .map(|i| {
            1.5 * (0.2_f64 + 0.6 * 0.1
                + 0.6 * 0.6 / (2.0 * 1.4)
                + kplus[(i, i)] / (2.0 * 2.0))
                .exp()
        })
        .sum::<f64>()
        / n as f64;

    assert!(
        (grand_mean - analytic).abs() < 3.0 * se,
        "grand mean {grand_mean} vs analytic {analytic} (se {se})"
    );
}

#[test]
fn vanishing_error_limit_recovers_the_naive_fit() {
    // sigma_u -> 0: the proxy equals the latent covariate, so all three
    // model variants must agree on the slope.
    let mut scenario = me_scenario(8, 8, 314);
    scenario.tau_u = 1e12; // sigma_u = 1e-6
    let (data, truth) = simulate_dataset(&scenario).unwrap();
    for (w, x) in data.w.iter().zip(&truth.x) {
        assert!((w - x).abs() < 1e-4);
    }

    let config = SamplerConfig {
        n_iterations: 4_000,
        n_burnin: 1_500,
        thinning: 5,
        rng_seed: 21,
        n_chains: 2,
        ..SamplerConfig::default()
    };
    let report = crashlattice::sim::attenuation_experiment(&scenario, &config).unwrap();
    assert_eq!(report.models.len(), 3);
    for pair in report.models.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let tol = 3.0 * a.slope_sd.max(b.slope_sd);
        assert!(
            (a.slope_mean - b.slope_mean).abs() < tol,
            "{:?} slope {} vs {:?} slope {} (tol {tol})",
            a.variant,
            a.slope_mean,
            b.variant,
            b.slope_mean
        );
    }
}

#[test]
fn recovery_calibration_of_the_90pc_interval() {
    // Across 50 replications of the default ME scenario, the 90% interval
    // for the slope should cover the truth between 80% and 98% of the
    // time.
    let n_reps = 50;
    let config = SamplerConfig {
        n_iterations: 4_000,
        n_burnin: 1_500,
        thinning: 5,
        rng_seed: 1,
        n_chains: 2,
        ..SamplerConfig::default()
    };
    let covered: usize = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let scenario = me_scenario(10, 10, 9_000 + rep as u64);
            let (data, truth) = simulate_dataset(&scenario).unwrap();
            let icar =
                IcarStructure::from_network(&scenario.build_network().unwrap()).unwrap();
            let samples = run_mcmc(
                &data,
                &ModelSpec::new(Variant::ClassicalMe),
                &icar,
                &config,
            )
            .unwrap();
            let slope = &summarize(&samples).unwrap()[1];
            usize::from(slope.q05 <= truth.beta[1] && truth.beta[1] <= slope.q95)
        })
        .sum();
    let share = covered as f64 / n_reps as f64;
    assert!(
        (0.80..=0.98).contains(&share),
        "coverage {share} outside the calibration band ({covered}/{n_reps})"
    );
}

#[test]
fn default_benchmark_chains_converge() {
    // Two chains on independent RNG streams over the default simulated
    // benchmark: rank-normalised split R-hat at most 1.05 on every
    // scalar parameter.
    use crashlattice::inference::diagnostics;
    let scenario = me_scenario(12, 12, 440);
    let (data, _) = simulate_dataset(&scenario).unwrap();
    let icar = IcarStructure::from_network(&scenario.build_network().unwrap()).unwrap();
    let config = SamplerConfig {
        n_iterations: 20_000,
        n_burnin: 8_000,
        thinning: 6,
        rng_seed: 77,
        n_chains: 2,
        ..SamplerConfig::default()
    };
    let samples = run_mcmc(
        &data,
        &ModelSpec::new(Variant::ClassicalMe),
        &icar,
        &config,
    )
    .unwrap();
    let report = diagnostics(&samples);
    for p in &report.parameters {
        let rhat = p.rhat.expect("two chains give an R-hat");
        assert!(
            rhat <= 1.05,
            "parameter {} has split R-hat {rhat}",
            p.name
        );
    }
}
