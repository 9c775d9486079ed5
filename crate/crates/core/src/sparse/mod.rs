//! Sparse and dense linear-algebra substrate.
//!
//! Everything above this module (hierarchy construction, the transform, the
//! localized transform, diagnostics) is built on the row-compressed
//! [`SparseMatrix`] defined here plus the small dense kernels in [`dense`].
//! Matrices are immutable after construction; all operations return new
//! values and are safe to call concurrently on shared inputs.

pub mod cg;
pub mod dense;
pub mod mm;

pub use cg::{cg_solve, cg_solve_strict, CgOptions, CgSolution};
pub use dense::{sym_eigen, DenseCholesky, DenseMatrix};

/// Row-compressed sparse matrix with sorted, duplicate-free column indices
/// per row (canonical form). Duplicate entries are merged at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed,
    /// columns sorted within each row; exact zeros produced by merging are kept
    /// (pattern algebra never drops entries based on magnitude).
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) out of bounds");
            rows[i].push((j, v));
        }
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in &mut rows {
            row.sort_unstable_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Builds directly from CSR arrays, validating canonical form.
    pub fn from_csr(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> crate::Result<Self> {
        if row_offsets.len() != nrows + 1 {
            return Err(crate::Error::Structure(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                nrows + 1
            )));
        }
        if row_offsets[0] != 0 || *row_offsets.last().unwrap() != col_indices.len() {
            return Err(crate::Error::Structure(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        if col_indices.len() != values.len() {
            return Err(crate::Error::Structure(
                "col_indices and values differ in length".into(),
            ));
        }
        for i in 0..nrows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(crate::Error::Structure(format!(
                    "row_offsets decreases at row {i}"
                )));
            }
            for t in lo..hi {
                if col_indices[t] >= ncols {
                    return Err(crate::Error::Structure(format!(
                        "column index {} out of bounds in row {i}",
                        col_indices[t]
                    )));
                }
                if t > lo && col_indices[t] <= col_indices[t - 1] {
                    return Err(crate::Error::Structure(format!(
                        "columns not strictly increasing in row {i}"
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// n-by-n identity.
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Entry (i, j), zero if absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(t) => vals[t],
            Err(_) => 0.0,
        }
    }

    /// Matrix-vector product `Mx`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.ncols, x.len(), "mul_vec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for (i, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            *out = acc;
        }
        y
    }

    /// Transposed matrix-vector product `Mᵀx`.
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.nrows, x.len(), "mul_vec_transposed dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Transpose.
    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let row_offsets = counts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let t = next[j];
                col_indices[t] = i;
                values[t] = v;
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Sparse-sparse product `self * other` with exact pattern algebra
    /// (no magnitude-based dropping).
    pub fn matmul(&self, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let n = other.ncols;
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        // dense accumulator with a touched-column list per row
        let mut acc = vec![0.0f64; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; n];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (bcols, bvals) = other.row(k);
                for (&j, &b) in bcols.iter().zip(bvals) {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                col_indices.push(j);
                values.push(acc[j]);
                acc[j] = 0.0;
                mark[j] = false;
            }
            touched.clear();
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: n,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Linear combination `alpha * self + beta * other` (same shape).
    pub fn add_scaled(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> SparseMatrix {
        assert_eq!(
            (self.nrows, self.ncols),
            (other.nrows, other.ncols),
            "add_scaled shape mismatch"
        );
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let (j, v) = if q >= cb.len() || (p < ca.len() && ca[p] < cb[q]) {
                    let out = (ca[p], alpha * va[p]);
                    p += 1;
                    out
                } else if p >= ca.len() || cb[q] < ca[p] {
                    let out = (cb[q], beta * vb[q]);
                    q += 1;
                    out
                } else {
                    let out = (ca[p], alpha * va[p] + beta * vb[q]);
                    p += 1;
                    q += 1;
                    out
                };
                col_indices.push(j);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(&self) -> SparseMatrix {
        assert_eq!(self.nrows, self.ncols, "symmetrize requires square matrix");
        self.add_scaled(0.5, &self.transpose(), 0.5)
    }

    /// Maximum deviation from symmetry, `max |M_ij - M_ji|`.
    pub fn symmetry_gap(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let t = self.transpose();
        let d = self.add_scaled(1.0, &t, -1.0);
        d.max_abs()
    }

    /// Checks the symmetry contract `max|M_ij - M_ji| <= tol * max|M|`.
    pub fn is_symmetric_within(&self, rel_tol: f64) -> bool {
        self.symmetry_gap() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Keeps entries where `keep(i, j)` holds; everything else becomes
    /// structurally zero.
    pub fn filter(&self, mut keep: impl FnMut(usize, usize) -> bool) -> SparseMatrix {
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if keep(i, j) {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Principal submatrix on `index_of`: `index_of[g]` is the local index of
    /// global row/column `g`, or `usize::MAX` when outside the subset.
    /// `subset` lists the globals in local order.
    pub fn principal_submatrix(&self, subset: &[usize], index_of: &[usize]) -> SparseMatrix {
        assert_eq!(self.nrows, self.ncols);
        let mut row_offsets = Vec::with_capacity(subset.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &g in subset {
            let (cols, vals) = self.row(g);
            let start = col_indices.len();
            for (&j, &v) in cols.iter().zip(vals) {
                let lj = index_of[j];
                if lj != usize::MAX {
                    col_indices.push(lj);
                    values.push(v);
                }
            }
            // local columns follow the order of `subset`, not the global order
            let mut tail: Vec<(usize, f64)> = col_indices[start..]
                .iter()
                .copied()
                .zip(values[start..].iter().copied())
                .collect();
            tail.sort_unstable_by_key(|&(j, _)| j);
            for (t, (j, v)) in tail.into_iter().enumerate() {
                col_indices[start + t] = j;
                values[start + t] = v;
            }
            row_offsets.push(col_indices.len());
        }
        SparseMatrix {
            nrows: subset.len(),
            ncols: subset.len(),
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Diagonal entries (zero where absent).
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn from_dense(d: &DenseMatrix) -> SparseMatrix {
        let mut triplets = Vec::new();
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let v = d[(i, j)];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        SparseMatrix::from_triplets(d.nrows(), d.ncols(), triplets)
    }

    /// Quadratic form `xᵀ M y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.mul_vec(y))
    }

    /// Verifies all stored values are finite.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `a + alpha * b` elementwise.
pub fn axpy(a: &[f64], alpha: f64, b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "axpy dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x + alpha * y).collect()
}

/// Energy norm `sqrt(xᵀ M x)`; `M` must be square and PSD for this to be
/// meaningful.
pub fn m_norm(m: &SparseMatrix, x: &[f64]) -> f64 {
    m.bilinear(x, x).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tridiag(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, t)
    }

    fn random_matrix(rng: &mut StdRng, n: usize, m: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.gen_bool(0.6) {
                    t.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(n, m, t)
    }

    #[test]
    fn spmv_identity() {
        let i3 = SparseMatrix::identity(3);
        assert_eq!(i3.mul_vec(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn spmv_tridiag_row_sums() {
        // row sums of tridiag(-1,2,-1) on (1,1,1): boundary rows keep 1
        let t = tridiag(3);
        assert_eq!(t.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn spmv_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let m = random_matrix(&mut rng, 5, 5);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = m.to_dense();
        // dense row-by-row oracle
        let mut expect = vec![0.0; 5];
        for i in 0..5 {
            for j in 0..5 {
                expect[i] += dense[(i, j)] * x[j];
            }
        }
        let got = m.mul_vec(&x);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-14);
        }
    }

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]);
        let (cols, vals) = m.row(0);
        assert_eq!(cols, &[0, 2]);
        assert_eq!(vals, &[2.0, 1.5]);
        assert_eq!(m.row(1).0.len(), 0);
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = StdRng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 6, 4);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn matmul_matches_dense() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 6, 5);
        let c = a.matmul(&b);
        let (da, db, dc) = (a.to_dense(), b.to_dense(), c.to_dense());
        for i in 0..4 {
            for j in 0..5 {
                let mut e = 0.0;
                for k in 0..6 {
                    e += da[(i, k)] * db[(k, j)];
                }
                assert!((dc[(i, j)] - e).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn symmetry_gap_detects_asymmetry() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 0.5)]);
        assert!((m.symmetry_gap() - 0.5).abs() < 1e-15);
        assert!(tridiag(5).is_symmetric_within(1e-12));
    }

    #[test]
    fn from_csr_validates_canonical_form() {
        // unsorted columns within a row
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 0], vec![1.0, 2.0]).is_err());
        // column out of bounds
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 1], vec![5], vec![1.0]).is_err());
        // offsets not ending at nnz
        assert!(SparseMatrix::from_csr(1, 2, vec![0, 2], vec![0], vec![1.0]).is_err());
        // a valid one round-trips
        let m = SparseMatrix::from_csr(2, 2, vec![0, 1, 2], vec![0, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 4.0);
    }

    #[test]
    fn principal_submatrix_extracts_block() {
        let t = tridiag(4);
        let subset = vec![1, 2];
        let mut index_of = vec![usize::MAX; 4];
        index_of[1] = 0;
        index_of[2] = 1;
        let s = t.principal_submatrix(&subset, &index_of);
        assert_eq!(s.get(0, 0), 2.0);
        assert_eq!(s.get(0, 1), -1.0);
        assert_eq!(s.get(1, 0), -1.0);
    }

    proptest! {
        // spmv linearity: M(ax + by) == a Mx + b My up to 1e-12 relative
        #[test]
        fn spmv_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let mut rng = StdRng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 6, 6);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = m.mul_vec(&z);
            let rhs = axpy(&m.mul_vec(&x).iter().map(|v| alpha * v).collect::<Vec<_>>(), beta, &m.mul_vec(&y));
            let scale = norm(&lhs).max(norm(&rhs)).max(1e-30);
            for (l, r) in lhs.iter().zip(&rhs) {
                prop_assert!((l - r).abs() <= 1e-12 * scale);
            }
        }
    }
}
