//! Monte-Carlo validation of constrained ICAR sampling against the
//! projected pseudo-inverse covariance.

mod common;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crashlattice::gmrf::IcarStructure;

fn path(n: usize) -> IcarStructure {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    IcarStructure::from_edges(n, &edges).unwrap()
}

/// Pseudo-inverse of a single-component ICAR structure matrix via the
/// algebraic identity (K + J/n)^{-1} = K^+ + J/n, using a plain dense
/// inverse (no eigen/Cholesky shared with the sampler).
fn pseudo_inverse_oracle(s: &IcarStructure) -> DMatrix<f64> {
    assert_eq!(s.n_components(), 1);
    let n = s.dim();
    let mut m = s.structure_matrix().to_dense();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += 1.0 / n as f64;
        }
    }
    let mut inv = m.try_inverse().expect("augmented matrix invertible");
    for i in 0..n {
        for j in 0..n {
            inv[(i, j)] -= 1.0 / n as f64;
        }
    }
    inv
}

#[test]
fn path5_constrained_covariance_matches_projected_pseudo_inverse() {
    let s = path(5);
    let tau = 1.0;
    let n = s.dim();
    let n_draws = 50_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20_250_101);

    let mut sums = vec![0.0_f64; n];
    let mut cross = DMatrix::<f64>::zeros(n, n);
    for _ in 0..n_draws {
        let d = s.sample_constrained(tau, &mut rng);
        assert!(s.max_component_sum(&d) <= 1e-10);
        for i in 0..n {
            sums[i] += d[i];
            for j in 0..n {
                cross[(i, j)] += d[i] * d[j];
            }
        }
    }
    let nf = n_draws as f64;
    let mut empirical = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            empirical[(i, j)] = cross[(i, j)] / nf - (sums[i] / nf) * (sums[j] / nf);
        }
    }

    let target = pseudo_inverse_oracle(&s) / tau;
    for i in 0..n {
        for j in 0..n {
            // Gaussian fourth-moment formula for the variance of a
            // sample covariance entry
            let se = ((target[(i, i)] * target[(j, j)] + target[(i, j)].powi(2)) / nf).sqrt();
            let diff = (empirical[(i, j)] - target[(i, j)]).abs();
            assert!(
                diff <= 3.0 * se,
                "entry ({i},{j}): diff {diff} exceeds 3 se = {}",
                3.0 * se
            );
        }
    }
}

#[test]
fn two_component_covariance_blocks_are_independent() {
    // disjoint edges: draws in different components must be uncorrelated
    let s = IcarStructure::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_draws = 40_000;
    let mut cross = 0.0;
    for _ in 0..n_draws {
        let d = s.sample_constrained(1.0, &mut rng);
        cross += d[0] * d[2];
    }
    cross /= n_draws as f64;
    assert!(cross.abs() < 0.02, "cross-component covariance {cross}");
}
