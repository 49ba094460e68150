//! Sparse LDL^T factorization for symmetric positive definite matrices.
//!
//! Up-looking factorization in the style of the classic LDL algorithm:
//! the elimination tree is discovered on the fly, each row of L is
//! computed by a sparse triangular solve against the rows already
//! factored. No fill-reducing ordering is applied; the lattices this
//! crate works on (road networks, grids) are low-bandwidth in their
//! natural order.

use super::{GmrfError, SparseSymmetricMatrix};

/// Factorization Q = L D L^T with unit lower-triangular L and positive
/// diagonal D. Reusable across solves; rebuilding is only needed when the
/// numeric values change.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    /// Column-major strictly-lower part of L: cols[j] holds (row, value)
    /// pairs with row > j, rows in increasing order.
    cols: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl LdlFactor {
    /// Factor `a + jitter * I`. Fails with the pivot index if a
    /// non-positive pivot shows up, which for exact arithmetic means the
    /// matrix is not positive definite.
    pub fn new(a: &SparseSymmetricMatrix, jitter: f64) -> Result<Self, GmrfError> {
        let n = a.dim();
        let upper = a.upper_columns();

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut diag = vec![0.0_f64; n];
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        // Dense workspaces reused across rows.
        let mut y = vec![0.0_f64; n];
        let mut pattern = vec![0_usize; n];

        for k in 0..n {
            // Scatter column k of the upper triangle into y and collect the
            // nonzero pattern of row k of L by walking the elimination tree.
            let mut top = n;
            flag[k] = k;
            let mut d_k = jitter;
            for &(i, v) in &upper[k] {
                if i == k {
                    d_k += v;
                    continue;
                }
                y[i] += v;
                let mut len = 0;
                let mut node = i;
                while flag[node] != k {
                    if parent[node] == usize::MAX {
                        parent[node] = k;
                    }
                    // Reuse the head of `pattern` as a scratch stack.
                    pattern[len] = node;
                    len += 1;
                    flag[node] = k;
                    node = parent[node];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }

            // Sparse triangular solve: compute row k of L against columns
            // top..n of the already-factored part, in topological order.
            for t in top..n {
                let j = pattern[t];
                let y_j = y[j];
                y[j] = 0.0;
                for &(i, l_ij) in &cols[j] {
                    y[i] -= l_ij * y_j;
                }
                let l_kj = y_j / diag[j];
                d_k -= l_kj * y_j;
                cols[j].push((k, l_kj));
            }

            if !(d_k > 0.0) || !d_k.is_finite() {
                return Err(GmrfError::NotPositiveDefinite {
                    index: k,
                    value: d_k,
                });
            }
            diag[k] = d_k;
        }

        Ok(Self { n, cols, diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve Q x = b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, GmrfError> {
        if b.len() != self.n {
            return Err(GmrfError::DimensionMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        // L y = b
        for j in 0..self.n {
            let x_j = x[j];
            for &(i, l_ij) in &self.cols[j] {
                x[i] -= l_ij * x_j;
            }
        }
        // D z = y
        for j in 0..self.n {
            x[j] /= self.diag[j];
        }
        // L^T x = z
        for j in (0..self.n).rev() {
            let mut acc = x[j];
            for &(i, l_ij) in &self.cols[j] {
                acc -= l_ij * x[i];
            }
            x[j] = acc;
        }
    }

    /// log det Q = sum of log pivots.
    pub fn logdet(&self) -> f64 {
        self.diag.iter().map(|d| d.ln()).sum()
    }

    /// Map a standard-normal vector z to a draw from N(0, Q^{-1}),
    /// i.e. compute L^{-T} D^{-1/2} z.
    pub fn correlate(&self, z: &[f64]) -> Result<Vec<f64>, GmrfError> {
        if z.len() != self.n {
            return Err(GmrfError::DimensionMismatch {
                expected: self.n,
                got: z.len(),
            });
        }
        let mut x: Vec<f64> = z
            .iter()
            .zip(&self.diag)
            .map(|(&zi, &di)| zi / di.sqrt())
            .collect();
        for j in (0..self.n).rev() {
            let mut acc = x[j];
            for &(i, l_ij) in &self.cols[j] {
                acc -= l_ij * x[i];
            }
            x[j] = acc;
        }
        Ok(x)
    }
}
