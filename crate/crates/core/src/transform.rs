//! The exact transform: level-by-level computation of the operator-adapted
//! basis, per-level stiffness matrices, restrictions, and subband solves.
//!
//! Level q starts from unit vectors; walking down, each level k computes
//!
//! ```text
//! B^(k)     = W^(k) A^(k) W^(k),T
//! N^(k)     = A^(k) W^(k),T B^(k),-1
//! R^(k-1,k) = π̄^(k-1,k) (I - N^(k) W^(k))
//! A^(k-1)   = R^(k-1,k) A^(k) R^(k,k-1)
//! Ψ^(k-1)   = R^(k-1,k) Ψ^(k),    X^(k) = W^(k) Ψ^(k)
//! ```
//!
//! turning `A u = b` into independent, uniformly well-conditioned systems
//! `A^(1) w^(1) = b^(1)` and `B^(k) w^(k) = W^(k) b^(k)`. Products use exact
//! pattern algebra (no entry is dropped), so this module doubles as the
//! oracle for the localized variant in [`crate::fast`].

use crate::hierarchy::{pseudo_inverse_pi, HierarchyOperators};
use crate::sparse::{axpy, cg_solve_strict, CgOptions, DenseCholesky, DenseMatrix, SparseMatrix};
use crate::{Error, Result};
use rayon::prelude::*;

/// Knobs for the transform. Levels with at most `dense_threshold` unknowns
/// are factored densely; larger ones go through conjugate gradient at
/// `cg_tol`. `store_n_cap` bounds the wavelet count up to which the (dense,
/// memory-hungry) `N^(k)` matrix is materialized; the restriction matrices
/// are computed without it either way.
#[derive(Debug, Clone, Copy)]
pub struct TransformConfig {
    pub dense_threshold: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub store_n_cap: usize,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            dense_threshold: 512,
            cg_tol: 1e-12,
            cg_max_iters: 100_000,
            store_n_cap: 1024,
        }
    }
}

/// Per-level operators produced by the transform. Level 1 has only `a` and
/// `psi`; wavelet-side fields exist for levels 2..=q.
#[derive(Debug, Clone)]
pub struct LevelData {
    /// `A^(k)`, the level stiffness matrix.
    pub a: SparseMatrix,
    /// `B^(k) = W A Wᵀ` (levels ≥ 2).
    pub b: Option<SparseMatrix>,
    /// `N^(k) = A Wᵀ B⁻¹` (levels ≥ 2, desk scale only; see `store_n_cap`).
    pub n: Option<SparseMatrix>,
    /// `R^(k-1,k)` (levels ≥ 2).
    pub r: Option<SparseMatrix>,
    /// Rows are the level-k basis vectors in `R^N`.
    pub psi: SparseMatrix,
    /// Rows are the orthogonalized basis vectors `χ` (levels ≥ 2).
    pub chi: Option<SparseMatrix>,
    /// Cached dense factorization of `B^(k)` (or of `A^(1)` at level 1).
    factor: Option<DenseCholesky>,
}

/// The full per-level output of the transform, immutable once built;
/// concurrent solves against one hierarchy are safe.
#[derive(Debug, Clone)]
pub struct GambletHierarchy {
    levels: Vec<LevelData>,
    config: TransformConfig,
}

/// Subband decomposition of a solve: `u = Σ_k v^(k)` with pairwise
/// A-orthogonal components.
#[derive(Debug, Clone)]
pub struct SubbandSolution {
    /// `v[k-1]` is the level-k component in `R^N`.
    pub v: Vec<Vec<f64>>,
    /// Coefficient vectors: `w[0]` over `I^(1)`, `w[k-1]` over `J^(k)`.
    pub w: Vec<Vec<f64>>,
    /// Measurement vectors `b^(k)` over `I^(k)`.
    pub b: Vec<Vec<f64>>,
    /// Assembled solution.
    pub u: Vec<f64>,
}

impl GambletHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.levels.last().unwrap().psi.ncols()
    }

    /// Level data, `k` in `1..=q`.
    pub fn level(&self, k: usize) -> &LevelData {
        &self.levels[k - 1]
    }

    pub fn config(&self) -> &TransformConfig {
        &self.config
    }

    /// Solves `B^(k) x = rhs` (or `A^(1) x = rhs` at level 1) through the
    /// cached factorization or CG.
    pub fn solve_level(&self, k: usize, rhs: &[f64]) -> Result<Vec<f64>> {
        let data = self.level(k);
        let m = if k == 1 {
            &data.a
        } else {
            data.b.as_ref().expect("level ≥ 2 has B")
        };
        solve_spd(m, data.factor.as_ref(), rhs, &self.config).map_err(|e| e.at_level(k))
    }
}

fn solve_spd(
    m: &SparseMatrix,
    factor: Option<&DenseCholesky>,
    rhs: &[f64],
    config: &TransformConfig,
) -> Result<Vec<f64>> {
    match factor {
        Some(f) => Ok(f.solve_vec(rhs)),
        None => cg_solve_strict(
            m,
            rhs,
            CgOptions {
                tol: config.cg_tol,
                max_iters: config.cg_max_iters,
                jacobi: false,
            },
        )
        .map(|s| s.x),
    }
}

/// Solves `M X = RHSᵀ` column-by-column; `rhs_t` holds the right-hand sides
/// as rows. Columns are independent and solved in parallel.
fn solve_spd_multi(
    m: &SparseMatrix,
    factor: Option<&DenseCholesky>,
    rhs_t: &SparseMatrix,
    config: &TransformConfig,
) -> Result<DenseMatrix> {
    let n = m.nrows();
    let cols: Vec<Vec<f64>> = (0..rhs_t.nrows())
        .into_par_iter()
        .map(|j| {
            let (cs, vs) = rhs_t.row(j);
            let mut rhs = vec![0.0; n];
            for (&c, &v) in cs.iter().zip(vs) {
                rhs[c] = v;
            }
            solve_spd(m, factor, &rhs, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DenseMatrix::zeros(n, rhs_t.nrows());
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    Ok(out)
}

fn maybe_factor(m: &SparseMatrix, config: &TransformConfig) -> Result<Option<DenseCholesky>> {
    if m.nrows() <= config.dense_threshold {
        Ok(Some(m.to_dense().cholesky()?))
    } else {
        Ok(None)
    }
}

/// Runs the transform: from `A` and the hierarchy operators, computes every
/// per-level operator. `A` must be SPD; `ops` must cover `A`'s dimension.
pub fn gamblet_transform(
    a: &SparseMatrix,
    ops: &HierarchyOperators,
    config: TransformConfig,
) -> Result<GambletHierarchy> {
    let n = ops.n_dofs();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Structure(format!(
            "matrix is {}x{} but the hierarchy covers {n} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    if !a.is_symmetric_within(1e-12) {
        return Err(Error::Invalid(
            "matrix is not symmetric within 1e-12 of its magnitude".into(),
        ));
    }
    let q = ops.depth();
    let mut levels: Vec<LevelData> = Vec::with_capacity(q);

    let mut a_k = a.clone();
    let mut psi_k = SparseMatrix::identity(n);
    for k in (2..=q).rev() {
        let w = ops.w_level(k);
        let aw_t = a_k.matmul(&w.transpose()); // A Wᵀ, reused twice
        let b = w.matmul(&aw_t).symmetrize();
        let factor = maybe_factor(&b, &config).map_err(|e| e.at_level(k))?;

        let pi_bar = pseudo_inverse_pi(ops.pi_level(k - 1)).map_err(|e| e.at_level(k))?;

        // R = π̄ (I - N W) with N = A Wᵀ B⁻¹; assembled as π̄ - (π̄N) W where
        // π̄N = (B⁻¹ (W A π̄ᵀ))ᵀ, so only |I^(k-1)| solves are needed.
        let w_a_pibar_t = w.matmul(&a_k).matmul(&pi_bar.transpose());
        let pibar_n_t = solve_spd_multi(&b, factor.as_ref(), &w_a_pibar_t.transpose(), &config)
            .map_err(|e| e.at_level(k))?;
        let pibar_n = SparseMatrix::from_dense(&pibar_n_t.transpose());
        let r = pi_bar.add_scaled(1.0, &pibar_n.matmul(w), -1.0);

        // N itself is dense within components; materialize at desk scale only
        let n_mat = if w.nrows() <= config.store_n_cap {
            let x = solve_spd_multi(
                &b,
                factor.as_ref(),
                &SparseMatrix::identity(w.nrows()),
                &config,
            )
            .map_err(|e| e.at_level(k))?;
            Some(SparseMatrix::from_dense(&aw_t.to_dense().matmul(&x)))
        } else {
            None
        };

        let chi = w.matmul(&psi_k);
        let a_next = r.matmul(&a_k).matmul(&r.transpose()).symmetrize();
        let psi_next = r.matmul(&psi_k);

        levels.push(LevelData {
            a: a_k,
            b: Some(b),
            n: n_mat,
            r: Some(r),
            psi: psi_k,
            chi: Some(chi),
            factor,
        });
        a_k = a_next;
        psi_k = psi_next;
    }
    let factor = maybe_factor(&a_k, &config).map_err(|e| e.at_level(1))?;
    levels.push(LevelData {
        a: a_k,
        b: None,
        n: None,
        r: None,
        psi: psi_k,
        chi: None,
        factor,
    });
    levels.reverse();
    Ok(GambletHierarchy { levels, config })
}

/// Solves `A u = b` through the hierarchy, returning the subband split.
pub fn gamblet_solve(
    h: &GambletHierarchy,
    ops: &HierarchyOperators,
    b: &[f64],
) -> Result<SubbandSolution> {
    let q = h.depth();
    let n = h.n_dofs();
    assert_eq!(b.len(), n, "right-hand side length mismatch");
    let mut v = vec![Vec::new(); q];
    let mut w_out = vec![Vec::new(); q];
    let mut b_out = vec![Vec::new(); q];

    let mut b_k = b.to_vec();
    for k in (2..=q).rev() {
        let data = h.level(k);
        let w_mat = ops.w_level(k);
        let rhs = w_mat.mul_vec(&b_k);
        let w_k = h.solve_level(k, &rhs)?;
        let chi = data.chi.as_ref().unwrap();
        v[k - 1] = chi.mul_vec_transposed(&w_k);
        w_out[k - 1] = w_k;
        b_out[k - 1] = b_k.clone();
        b_k = data.r.as_ref().unwrap().mul_vec(&b_k);
    }
    let w_1 = h.solve_level(1, &b_k)?;
    v[0] = h.level(1).psi.mul_vec_transposed(&w_1);
    w_out[0] = w_1;
    b_out[0] = b_k;

    let mut u = vec![0.0; n];
    for vk in &v {
        u = axpy(&u, 1.0, vk);
    }
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::Breakdown {
            iteration: 0,
            detail: "assembled solution contains non-finite entries".into(),
        });
    }
    Ok(SubbandSolution {
        v,
        w: w_out,
        b: b_out,
        u,
    })
}

/// Splits a given vector `u` into its A-orthogonal subband components
/// (the transform of `u` rather than of a right-hand side).
pub fn decompose(
    h: &GambletHierarchy,
    ops: &HierarchyOperators,
    u: &[f64],
) -> Result<SubbandSolution> {
    // level-q measurements of u are ⟨ψ_i^(q), u⟩ = (A u)_i
    let au = h.level(h.depth()).a.mul_vec(u);
    gamblet_solve(h, ops, &au)
}

/// Reassembles `u = Σ_k v^(k)`.
pub fn reconstruct(s: &SubbandSolution) -> Vec<f64> {
    let n = s.v.last().map_or(0, |v| v.len());
    let mut u = vec![0.0; n];
    for vk in &s.v {
        if !vk.is_empty() {
            u = axpy(&u, 1.0, vk);
        }
    }
    u
}

/// Rank-`|I^(k)|` compressed application of the inverse:
/// `Ψ^(k),T A^(k),-1 Ψ^(k) b`. At `k = q` this is the exact solve.
pub fn compressed_inverse_apply(h: &GambletHierarchy, k: usize, b: &[f64]) -> Result<Vec<f64>> {
    assert!(k >= 1 && k <= h.depth(), "level out of range");
    let data = h.level(k);
    let restricted = data.psi.mul_vec(b);
    let coeffs = if k == 1 {
        h.solve_level(1, &restricted)?
    } else {
        // A^(k) systems are factored only at level 1; solve explicitly here
        solve_spd(&data.a, None, &restricted, h.config()).map_err(|e| e.at_level(k))?
    };
    Ok(data.psi.mul_vec_transposed(&coeffs))
}

/// Dense oracle: the level basis vector as the constrained minimizer,
/// `ψ_i = A⁻¹ Φᵀ (Φ A⁻¹ Φᵀ)⁻¹ e_i`. Coincides with the conditional
/// expectation of a centered Gaussian with covariance `A⁻¹` given the
/// measurements `Φ`.
pub fn gamblet_oracle(a: &DenseMatrix, phi: &DenseMatrix, i: usize) -> Result<Vec<f64>> {
    let theta = theta_matrix(a, phi)?;
    let mut e = vec![0.0; phi.nrows()];
    e[i] = 1.0;
    let y = theta
        .cholesky()
        .map_err(|_| Error::RankDeficient("Φ A⁻¹ Φᵀ is singular".into()))?
        .solve_vec(&e);
    // A⁻¹ Φᵀ y
    let phity = phi.transpose().mul_vec(&y);
    Ok(a.cholesky()?.solve_vec(&phity))
}

/// Dense oracle: `Θ = Φ A⁻¹ Φᵀ`, positive definite for full-rank `Φ`.
pub fn theta_matrix(a: &DenseMatrix, phi: &DenseMatrix) -> Result<DenseMatrix> {
    let ainv_phit = a.solve(&phi.transpose())?;
    let theta = phi.matmul(&ainv_phit);
    // symmetrize rounding noise
    Ok(theta.add_scaled(0.5, &theta.transpose(), 0.5))
}
