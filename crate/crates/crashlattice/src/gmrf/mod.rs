//! Sparse symmetric algebra for the intrinsic CAR prior.
//!
//! The ICAR field theta on a lattice with binary adjacency W has the
//! improper joint density
//!
//! ```text
//! p(theta | tau) ∝ tau^((n-k)/2) * exp(-tau/2 * theta' K theta),   K = D - W
//! ```
//!
//! where D is the diagonal of neighbour counts and k the number of
//! connected components. K is rank n-k with the component indicator
//! vectors spanning its null space; the model is identified by a
//! sum-to-zero constraint per component. The density constant used here
//! fixes the generalised determinant to the product of the n-k positive
//! eigenvalues of K, so that information criteria computed on a common
//! lattice are comparable across model variants.

mod ldl;

pub use ldl::LdlFactor;

use std::io::{self, Write};
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::lattice::SegmentNetwork;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum GmrfError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate entry at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("entry ({row}, {col}) out of bounds for dimension {dim}")]
    IndexOutOfBounds { row: usize, col: usize, dim: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },
    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("segment {index} has no neighbours; prune isolated components before building the ICAR structure")]
    IsolatedVertex { index: usize },
    #[error("ICAR structure requires at least 2 segments, got {n}")]
    TooSmall { n: usize },
    #[error("sum-to-zero violation in component {component}: |sum| = {magnitude:e} exceeds {tolerance:e}")]
    SumToZeroViolation {
        component: usize,
        magnitude: f64,
        tolerance: f64,
    },
    #[error("precision must be positive, got {tau}")]
    NonPositivePrecision { tau: f64 },
}

/// Sparse symmetric matrix stored as the upper triangle (row <= col),
/// one sorted column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    /// cols[j] lists (row, value) with row <= j, rows increasing.
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetricMatrix {
    /// Build from coordinate triplets. Entries may be given in either
    /// orientation; they are normalised to row <= col. Duplicates (after
    /// normalisation), out-of-range indices, and non-finite values are
    /// rejected.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, GmrfError> {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(GmrfError::IndexOutOfBounds {
                    row: i,
                    col: j,
                    dim: n,
                });
            }
            if !v.is_finite() {
                return Err(GmrfError::NonFiniteValue { row: i, col: j });
            }
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            cols[c].push((r, v));
        }
        for (c, col) in cols.iter_mut().enumerate() {
            col.sort_unstable_by_key(|&(r, _)| r);
            for w in col.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(GmrfError::DuplicateEntry {
                        row: w[0].0,
                        col: c,
                    });
                }
            }
        }
        Ok(Self { n, cols })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored (upper-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// Iterate stored entries as (row, col, value) with row <= col.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.cols
            .iter()
            .enumerate()
            .flat_map(|(c, col)| col.iter().map(move |&(r, v)| (r, c, v)))
    }

    pub(crate) fn upper_columns(&self) -> &[Vec<(usize, f64)>] {
        &self.cols
    }

    /// Symmetric matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, GmrfError> {
        if x.len() != self.n {
            return Err(GmrfError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.n];
        for (r, c, v) in self.entries() {
            out[r] += v * x[c];
            if r != c {
                out[c] += v * x[r];
            }
        }
        Ok(out)
    }

    /// Quadratic form x' A x.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64, GmrfError> {
        if x.len() != self.n {
            return Err(GmrfError::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut acc = 0.0;
        for (r, c, v) in self.entries() {
            if r == c {
                acc += v * x[r] * x[r];
            } else {
                acc += 2.0 * v * x[r] * x[c];
            }
        }
        Ok(acc)
    }

    /// scale * A + diag(d), with the union sparsity pattern.
    pub fn scaled_plus_diagonal(&self, scale: f64, d: &[f64]) -> Result<Self, GmrfError> {
        if d.len() != self.n {
            return Err(GmrfError::DimensionMismatch {
                expected: self.n,
                got: d.len(),
            });
        }
        let mut cols = self.cols.clone();
        for (j, col) in cols.iter_mut().enumerate() {
            let mut has_diag = false;
            for e in col.iter_mut() {
                e.1 *= scale;
                if e.0 == j {
                    e.1 += d[j];
                    has_diag = true;
                }
            }
            if !has_diag && d[j] != 0.0 {
                col.push((j, d[j]));
            }
        }
        Ok(Self { n: self.n, cols })
    }

    /// Principal submatrix on `keep` (strictly increasing indices).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); keep.len()];
        for (r, c, v) in self.entries() {
            if map[r] != usize::MAX && map[c] != usize::MAX {
                cols[map[c]].push((map[r], v));
            }
        }
        Self {
            n: keep.len(),
            cols,
        }
    }

    /// Densify; intended for small verification paths.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// Write in MatrixMarket symmetric coordinate format.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        // MatrixMarket symmetric storage expects the lower triangle.
        for (r, c, v) in self.entries() {
            writeln!(w, "{} {} {}", c + 1, r + 1, v)?;
        }
        Ok(())
    }
}

/// ICAR structure matrix K = D - W plus the component bookkeeping that
/// drives constraints and the generalised determinant.
#[derive(Debug)]
pub struct IcarStructure {
    k: SparseSymmetricMatrix,
    n_components: usize,
    component_label: Vec<usize>,
    logdet_plus: OnceLock<f64>,
}

impl Clone for IcarStructure {
    fn clone(&self) -> Self {
        Self {
            k: self.k.clone(),
            n_components: self.n_components,
            component_label: self.component_label.clone(),
            logdet_plus: self.logdet_plus.clone(),
        }
    }
}

impl IcarStructure {
    /// Build K from a lattice network: K[i][i] = m_i, K[i][j] = -1 for
    /// adjacent pairs. Fails on isolated segments (their ICAR marginal is
    /// improper) and on networks with fewer than 2 segments.
    pub fn from_network(network: &SegmentNetwork) -> Result<Self, GmrfError> {
        Self::from_edges_labeled(
            network.len(),
            network.edges(),
            network.component_labels().to_vec(),
            network.n_components(),
        )
    }

    /// Build K from an explicit edge list on n vertices; components are
    /// computed from the edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GmrfError> {
        let (labels, n_components) = label_components(n, edges);
        Self::from_edges_labeled(n, edges.iter().copied(), labels, n_components)
    }

    fn from_edges_labeled(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        component_label: Vec<usize>,
        n_components: usize,
    ) -> Result<Self, GmrfError> {
        if n < 2 {
            return Err(GmrfError::TooSmall { n });
        }
        let mut degree = vec![0_usize; n];
        let mut triplets = Vec::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GmrfError::IndexOutOfBounds {
                    row: i,
                    col: j,
                    dim: n,
                });
            }
            degree[i] += 1;
            degree[j] += 1;
            triplets.push((i, j, -1.0));
        }
        if let Some(idx) = degree.iter().position(|&d| d == 0) {
            return Err(GmrfError::IsolatedVertex { index: idx });
        }
        for (i, &d) in degree.iter().enumerate() {
            triplets.push((i, i, d as f64));
        }
        let k = SparseSymmetricMatrix::from_triplets(n, &triplets)?;
        Ok(Self {
            k,
            n_components,
            component_label,
            logdet_plus: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn component_labels(&self) -> &[usize] {
        &self.component_label
    }

    /// Vertex indices grouped by component label.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_components];
        for (i, &c) in self.component_label.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }

    pub fn structure_matrix(&self) -> &SparseSymmetricMatrix {
        &self.k
    }

    /// rank(K) = n - number of components.
    pub fn rank(&self) -> usize {
        self.dim() - self.n_components
    }

    /// Generalised log-determinant: the sum of the logs of the n-k
    /// positive eigenvalues of K. Computed on first use via the
    /// matrix-tree identity det+(K_c) = n_c * det(K_c with one vertex
    /// grounded), which keeps everything sparse.
    pub fn logdet_plus(&self) -> f64 {
        *self.logdet_plus.get_or_init(|| {
            let mut total = 0.0;
            for comp in self.components() {
                let grounded = self.k.submatrix(&comp[..comp.len() - 1]);
                let factor = LdlFactor::new(&grounded, 0.0)
                    .expect("grounded ICAR component is positive definite");
                total += (comp.len() as f64).ln() + factor.logdet();
            }
            total
        })
    }

    /// Largest per-component constraint violation |sum theta_c|.
    pub fn max_component_sum(&self, v: &[f64]) -> f64 {
        let mut sums = vec![0.0_f64; self.n_components];
        for (i, &x) in v.iter().enumerate() {
            sums[self.component_label[i]] += x;
        }
        sums.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Check the per-component sum-to-zero constraint.
    pub fn check_sum_to_zero(&self, v: &[f64], tolerance: f64) -> Result<(), GmrfError> {
        let mut sums = vec![0.0_f64; self.n_components];
        for (i, &x) in v.iter().enumerate() {
            sums[self.component_label[i]] += x;
        }
        for (c, s) in sums.iter().enumerate() {
            if s.abs() > tolerance {
                return Err(GmrfError::SumToZeroViolation {
                    component: c,
                    magnitude: s.abs(),
                    tolerance,
                });
            }
        }
        Ok(())
    }

    /// Subtract the per-component mean in place, enforcing the constraint
    /// exactly.
    pub fn project_sum_to_zero(&self, v: &mut [f64]) {
        let mut sums = vec![0.0_f64; self.n_components];
        let mut counts = vec![0_usize; self.n_components];
        for (i, &x) in v.iter().enumerate() {
            sums[self.component_label[i]] += x;
            counts[self.component_label[i]] += 1;
        }
        for (i, x) in v.iter_mut().enumerate() {
            let c = self.component_label[i];
            *x -= sums[c] / counts[c] as f64;
        }
    }

    /// Log-density of the ICAR law under the sum-to-zero identification:
    ///
    /// ```text
    /// (n-k)/2 * (ln tau - ln 2pi) + 1/2 * logdet_plus - tau/2 * theta' K theta
    /// ```
    ///
    /// Fails if theta violates the constraint by more than 1e-8 per
    /// component, or if tau is not positive.
    pub fn logdensity(&self, theta: &[f64], tau: f64) -> Result<f64, GmrfError> {
        if !(tau > 0.0) {
            return Err(GmrfError::NonPositivePrecision { tau });
        }
        if theta.len() != self.dim() {
            return Err(GmrfError::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        self.check_sum_to_zero(theta, 1e-8)?;
        let q = self.k.quad_form(theta)?;
        let r = self.rank() as f64;
        Ok(0.5 * r * (tau.ln() - LN_2PI) + 0.5 * self.logdet_plus() - 0.5 * tau * q)
    }

    /// Draw from the ICAR law conditioned on per-component sum-to-zero.
    ///
    /// Uses the augmented matrix M = K + sum_c (1/n_c) 1_c 1_c', which is
    /// positive definite and agrees with K on the constraint subspace:
    /// a draw z ~ N(0, M^{-1}) recentred per component has exactly the
    /// projected pseudo-inverse covariance (K^+)/tau. Dense Cholesky;
    /// intended for simulation-scale lattices.
    pub fn sample_constrained<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Vec<f64> {
        assert!(tau > 0.0, "precision must be positive");
        let n = self.dim();
        let mut m = self.k.to_dense();
        for comp in self.components() {
            let w = 1.0 / comp.len() as f64;
            for &i in &comp {
                for &j in &comp {
                    m[(i, j)] += w;
                }
            }
        }
        let chol = Cholesky::new(m).expect("augmented ICAR matrix is positive definite");
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let unconstrained = chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular solve");
        let mut draw: Vec<f64> = unconstrained.iter().map(|v| v / tau.sqrt()).collect();
        self.project_sum_to_zero(&mut draw);
        draw
    }
}

/// Solve Q x = b for a strictly positive definite Q. One-shot
/// convenience; hold an [`LdlFactor`] to reuse the factorization.
pub fn solve_spd(q: &SparseSymmetricMatrix, b: &[f64]) -> Result<Vec<f64>, GmrfError> {
    LdlFactor::new(q, 0.0)?.solve(b)
}

/// Connected-component labelling over an undirected edge list.
pub(crate) fn label_components(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if labels[start] != usize::MAX {
            continue;
        }
        stack.push(start);
        labels[start] = next;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if labels[u] == usize::MAX {
                    labels[u] = next;
                    stack.push(u);
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> IcarStructure {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        IcarStructure::from_edges(n, &edges).unwrap()
    }

    #[test]
    fn path3_structure_matrix() {
        let s = path(3);
        let dense = s.structure_matrix().to_dense();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(dense, expected);
        assert_eq!(s.n_components(), 1);
    }

    #[test]
    fn four_cycle_rank_and_diagonal() {
        let s = IcarStructure::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let dense = s.structure_matrix().to_dense();
        for i in 0..4 {
            assert_eq!(dense[(i, i)], 2.0);
        }
        // rank from a dense eigendecomposition oracle
        let eig = dense.symmetric_eigen();
        let rank = eig.eigenvalues.iter().filter(|&&l| l > 1e-9).count();
        assert_eq!(rank, 3);
        assert_eq!(s.rank(), 3);
    }

    #[test]
    fn two_disjoint_edges_rank() {
        let s = IcarStructure::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(s.n_components(), 2);
        assert_eq!(s.rank(), 2);
    }

    #[test]
    fn isolated_vertex_rejected() {
        match IcarStructure::from_edges(3, &[(0, 1)]) {
            Err(GmrfError::IsolatedVertex { index }) => assert_eq!(index, 2),
            other => panic!("expected isolated-vertex error, got {other:?}"),
        }
    }

    #[test]
    fn quad_form_constant_vector_is_zero() {
        let s = path(5);
        let q = s.structure_matrix().quad_form(&vec![3.7; 5]).unwrap();
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn quad_form_path3_hand_value() {
        let s = path(3);
        let q = s.structure_matrix().quad_form(&[0.0, 1.0, 0.0]).unwrap();
        assert!((q - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quad_form_matches_dense_oracle_on_random_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = rng.gen_range(5..40);
            let mut edges = Vec::new();
            // random connected-ish graph: a spanning path plus extras
            for i in 0..n - 1 {
                edges.push((i, i + 1));
            }
            for _ in 0..n {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                if a != b && !edges.contains(&(a.min(b), a.max(b))) {
                    edges.push((a.min(b), a.max(b)));
                }
            }
            let s = IcarStructure::from_edges(n, &edges).unwrap();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q = s.structure_matrix().quad_form(&v).unwrap();
            let dense = s.structure_matrix().to_dense();
            let dv = DVector::from_column_slice(&v);
            let oracle = (dv.transpose() * dense * dv)[(0, 0)];
            assert!((q - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
            // and the pairwise-difference identity
            let pairwise: f64 = edges
                .iter()
                .map(|&(i, j)| (v[i] - v[j]) * (v[i] - v[j]))
                .sum();
            assert!((q - pairwise).abs() <= 1e-12 * pairwise.max(1.0));
        }
    }

    #[test]
    fn logdet_plus_matches_dense_eigenvalues() {
        let graphs: Vec<(usize, Vec<(usize, usize)>)> = vec![
            (3, vec![(0, 1), (1, 2)]),
            (4, vec![(0, 1), (1, 2), (2, 3), (0, 3)]),
            (6, vec![(0, 1), (1, 2), (3, 4), (4, 5)]),
            (5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (0, 2), (1, 4)]),
        ];
        for (n, edges) in graphs {
            let s = IcarStructure::from_edges(n, &edges).unwrap();
            let eig = s.structure_matrix().to_dense().symmetric_eigen();
            let oracle: f64 = eig
                .eigenvalues
                .iter()
                .filter(|&&l| l > 1e-9)
                .map(|l| l.ln())
                .sum();
            assert!(
                (s.logdet_plus() - oracle).abs() < 1e-9,
                "n={n}: {} vs {oracle}",
                s.logdet_plus()
            );
        }
    }

    #[test]
    fn logdet_plus_of_disjoint_union_is_sum() {
        let a = IcarStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let b = IcarStructure::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let union = IcarStructure::from_edges(
            7,
            &[(0, 1), (1, 2), (3, 4), (4, 5), (5, 6), (3, 6)],
        )
        .unwrap();
        assert!((union.logdet_plus() - a.logdet_plus() - b.logdet_plus()).abs() < 1e-10);
    }

    #[test]
    fn logdensity_zero_field() {
        let s = path(3);
        let tau = 2.5;
        let got = s.logdensity(&[0.0; 3], tau).unwrap();
        let want = 0.5 * 2.0 * (tau.ln() - LN_2PI) + 0.5 * s.logdet_plus();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn logdensity_matches_dense_pseudo_inverse_gaussian() {
        // path-3, tau = 1, theta = (-1, 0, 1): evaluate the constrained
        // Gaussian density through an eigendecomposition of K.
        let s = path(3);
        let theta = [-1.0, 0.0, 1.0];
        let got = s.logdensity(&theta, 1.0).unwrap();
        let eig = s.structure_matrix().to_dense().symmetric_eigen();
        let mut logdet = 0.0;
        let mut quad = 0.0;
        for (idx, &l) in eig.eigenvalues.iter().enumerate() {
            if l > 1e-9 {
                logdet += l.ln();
                let v = eig.eigenvectors.column(idx);
                let proj: f64 = v.iter().zip(&theta).map(|(a, b)| a * b).sum();
                quad += l * proj * proj;
            }
        }
        let want = 0.5 * 2.0 * (0.0 - LN_2PI) + 0.5 * logdet - 0.5 * quad;
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn logdensity_tau_scaling_identity() {
        let s = path(4);
        let mut theta = vec![0.3, -0.5, 0.9, 0.0];
        s.project_sum_to_zero(&mut theta);
        let tau = 0.7;
        let q = s.structure_matrix().quad_form(&theta).unwrap();
        let base = s.logdensity(&theta, tau).unwrap();
        let scaled = s.logdensity(&theta, 4.0 * tau).unwrap();
        let want = 0.5 * s.rank() as f64 * 4.0_f64.ln() - 1.5 * tau * q;
        assert!((scaled - base - want).abs() < 1e-10);
    }

    #[test]
    fn logdensity_rejects_constraint_violation() {
        let s = path(3);
        assert!(matches!(
            s.logdensity(&[1.0, 1.0, 1.0], 1.0),
            Err(GmrfError::SumToZeroViolation { .. })
        ));
    }

    #[test]
    fn constrained_draws_satisfy_constraint() {
        let s = IcarStructure::from_edges(6, &[(0, 1), (1, 2), (3, 4), (4, 5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let draw = s.sample_constrained(0.8, &mut rng);
            assert!(s.max_component_sum(&draw) <= 1e-10);
        }
    }

    #[test]
    fn constrained_draw_variance_scales_with_tau() {
        let s = path(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n_draws = 20_000;
        let var_at = |tau: f64, rng: &mut ChaCha8Rng| {
            let mut acc = 0.0;
            for _ in 0..n_draws {
                let d = s.sample_constrained(tau, rng);
                acc += d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
            }
            acc / n_draws as f64
        };
        let v1 = var_at(1.0, &mut rng);
        let v100 = var_at(100.0, &mut rng);
        let ratio = v1 / v100;
        assert!((ratio - 100.0).abs() < 5.0, "ratio {ratio}");
    }

    #[test]
    fn solve_spd_on_shifted_path_matches_dense() {
        let s = path(3);
        let q = s
            .structure_matrix()
            .scaled_plus_diagonal(1.0, &[1.0, 1.0, 1.0])
            .unwrap();
        let x = solve_spd(&q, &[1.0, 1.0, 1.0]).unwrap();
        let dense = q.to_dense();
        let oracle = dense
            .lu()
            .solve(&DVector::from_element(3, 1.0))
            .unwrap();
        for (a, b) in x.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn matrix_market_roundtrip_text() {
        let s = path(3);
        let mut buf = Vec::new();
        s.structure_matrix().write_matrix_market(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
        assert!(text.contains("3 3 5"));
    }
}
