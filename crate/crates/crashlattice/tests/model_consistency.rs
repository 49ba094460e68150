//! Finite-difference validation of the analytic joint gradient, plus
//! cross-variant consistency checks.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crashlattice::gmrf::IcarStructure;
use crashlattice::model::{
    joint_gradient, joint_logposterior, Column, Dataset, DesignMatrix, LatentState, ModelSpec,
    Standardization, Variant,
};

fn random_instance(
    variant: Variant,
    seed: u64,
) -> (Dataset, ModelSpec, IcarStructure, LatentState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 9;
    let z = DesignMatrix::from_columns(vec![Column::raw_numeric(
        "z1",
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )])
    .unwrap();
    let ztilde = DesignMatrix::from_columns(vec![Column::raw_numeric(
        "zt1",
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )])
    .unwrap();
    let data = Dataset::new(
        (0..n).map(|_| rng.gen_range(0..6) as u64).collect(),
        (0..n).map(|_| rng.gen_range(0.5..2.0)).collect(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        "traffic",
        Standardization::identity(),
        z,
        ztilde,
    )
    .unwrap();
    let edges: Vec<(usize, usize)> = (0..n - 1)
        .map(|i| (i, i + 1))
        .chain([(0, 4), (2, 7)])
        .collect();
    let icar = IcarStructure::from_edges(n, &edges).unwrap();
    let spec = ModelSpec::new(variant);
    let mut state = LatentState::initial(&spec, &data);
    for b in &mut state.beta {
        *b = rng.gen_range(-0.4..0.4);
    }
    for a in &mut state.alpha {
        *a = rng.gen_range(-0.4..0.4);
    }
    for v in &mut state.theta {
        *v = rng.gen_range(-0.4..0.4);
    }
    icar.project_sum_to_zero(&mut state.theta);
    for v in &mut state.phi {
        *v = rng.gen_range(-0.4..0.4);
    }
    if !state.phi.is_empty() {
        icar.project_sum_to_zero(&mut state.phi);
    }
    for v in &mut state.x {
        *v += rng.gen_range(-0.3..0.3);
    }
    state.tau_theta = rng.gen_range(0.5..3.0);
    state.tau_eps = rng.gen_range(0.5..3.0);
    state.tau_u = rng.gen_range(0.5..3.0);
    state.tau_phi = rng.gen_range(0.5..3.0);
    (data, spec, icar, state)
}

/// Random direction over the latent coordinates, with the field parts
/// projected onto the constraint subspace so that central differences
/// stay on the manifold.
struct Direction {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    x: Vec<f64>,
    theta: Vec<f64>,
    phi: Vec<f64>,
}

fn random_direction(state: &LatentState, icar: &IcarStructure, rng: &mut ChaCha8Rng) -> Direction {
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    };
    let beta = draw(state.beta.len());
    let alpha = draw(state.alpha.len());
    let x = draw(state.x.len());
    let mut theta = draw(state.theta.len());
    if !theta.is_empty() {
        icar.project_sum_to_zero(&mut theta);
    }
    let mut phi = draw(state.phi.len());
    if !phi.is_empty() {
        icar.project_sum_to_zero(&mut phi);
    }
    Direction {
        beta,
        alpha,
        x,
        theta,
        phi,
    }
}

fn perturbed(state: &LatentState, dir: &Direction, h: f64) -> LatentState {
    let mut out = state.clone();
    let shift = |target: &mut [f64], d: &[f64]| {
        for (t, v) in target.iter_mut().zip(d) {
            *t += h * v;
        }
    };
    shift(&mut out.beta, &dir.beta);
    shift(&mut out.alpha, &dir.alpha);
    shift(&mut out.x, &dir.x);
    shift(&mut out.theta, &dir.theta);
    shift(&mut out.phi, &dir.phi);
    out
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for variant in [Variant::Baseline, Variant::ClassicalMe, Variant::SpatialMe] {
        for instance in 0..10 {
            let seed = 1000 * (variant as u64 + 1) + instance;
            let (data, spec, icar, state) = random_instance(variant, seed);
            let grad = joint_gradient(&state, &data, &spec, &icar).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFFFF);
            for _ in 0..4 {
                let dir = random_direction(&state, &icar, &mut rng);
                let dot = |g: &[f64], d: &[f64]| -> f64 {
                    g.iter().zip(d).map(|(a, b)| a * b).sum()
                };
                let analytic = dot(&grad.beta, &dir.beta)
                    + dot(&grad.alpha, &dir.alpha)
                    + dot(&grad.x, &dir.x)
                    + dot(&grad.theta, &dir.theta)
                    + dot(&grad.phi, &dir.phi);
                let h = 1e-4;
                let fp =
                    joint_logposterior(&perturbed(&state, &dir, h), &data, &spec, &icar).unwrap();
                let fm =
                    joint_logposterior(&perturbed(&state, &dir, -h), &data, &spec, &icar).unwrap();
                let numeric = (fp - fm) / (2.0 * h);
                let denom = analytic.abs().max(1.0);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-5,
                    "{variant:?} seed {seed}: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}

#[test]
fn single_coordinate_gradients_match() {
    // spot-check a few raw coordinates (beta_0, x_3, theta_2) with
    // one-hot directions
    let (data, spec, icar, state) = random_instance(Variant::SpatialMe, 77);
    let grad = joint_gradient(&state, &data, &spec, &icar).unwrap();
    let h = 1e-5;

    let mut s_plus = state.clone();
    s_plus.beta[0] += h;
    let mut s_minus = state.clone();
    s_minus.beta[0] -= h;
    let numeric = (joint_logposterior(&s_plus, &data, &spec, &icar).unwrap()
        - joint_logposterior(&s_minus, &data, &spec, &icar).unwrap())
        / (2.0 * h);
    assert!((grad.beta[0] - numeric).abs() < 1e-5 * numeric.abs().max(1.0));

    let mut s_plus = state.clone();
    s_plus.x[3] += h;
    let mut s_minus = state.clone();
    s_minus.x[3] -= h;
    let numeric = (joint_logposterior(&s_plus, &data, &spec, &icar).unwrap()
        - joint_logposterior(&s_minus, &data, &spec, &icar).unwrap())
        / (2.0 * h);
    assert!((grad.x[3] - numeric).abs() < 1e-5 * numeric.abs().max(1.0));
}

#[test]
fn baseline_gradient_has_no_me_blocks() {
    let (data, spec, icar, state) = random_instance(Variant::Baseline, 5);
    let grad = joint_gradient(&state, &data, &spec, &icar).unwrap();
    assert!(grad.alpha.is_empty());
    assert!(grad.x.is_empty());
    assert!(grad.phi.is_empty());
    assert_eq!(grad.beta.len(), state.beta.len());
    assert_eq!(grad.theta.len(), data.len());
}
