//! The localized (near-linear) variant of the transform.
//!
//! Away from the diagonal the level operators decay exponentially in the
//! graph distance that the matrix pattern induces on each level's labels, so
//! the per-level computations can be confined to distance balls:
//!
//! * [`localized_inverse`] solves the restriction systems column by column on
//!   a ball around each target index (`Inv_ρ`),
//! * [`truncate`] masks the coarsened stiffness matrix outside a `2ρ` ball
//!   (`Trun`), symmetrizing the result,
//! * [`LocalizationSchedule`] carries the per-level radii
//!   `ρ_k ≥ C_a ((1 + 1/ln(1/H)) ln(1/H^k) + ln(1/ε))` and the inner-solve
//!   accuracy targets `ε/(2k²)` (subbands) and `ε/2` (coarse solve),
//! * [`fast_gamblet_solve`] runs the whole localized transform and solve.
//!
//! With radii at or above the level diameters, every localized object matches
//! its exact counterpart to inner-solve accuracy; the exact transform is the
//! oracle for everything here.

use crate::hierarchy::{pseudo_inverse_pi, HierarchyOperators, IndexTree};
use crate::sparse::{axpy, cg_solve_strict, CgOptions, SparseMatrix};
use crate::transform::SubbandSolution;
use crate::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

/// Graph distance between level-k labels: two labels are adjacent when some
/// pair of their descendant dofs is coupled by the matrix pattern.
#[derive(Debug, Clone)]
pub struct LevelGraphDistance {
    level: usize,
    n: usize,
    adj_offsets: Vec<usize>,
    adj_targets: Vec<usize>,
}

impl LevelGraphDistance {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_labels(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj_targets[self.adj_offsets[i]..self.adj_offsets[i + 1]]
    }

    /// 0/1 connectivity matrix (diagonal included).
    pub fn connectivity(&self) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..self.n {
            t.push((i, i, 1.0));
            for &j in self.neighbors(i) {
                t.push((i, j, 1.0));
            }
        }
        SparseMatrix::from_triplets(self.n, self.n, t)
    }

    /// Labels within distance `rho` of `i` (sorted); truncated breadth-first
    /// search.
    pub fn ball(&self, i: usize, rho: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        dist[i] = 0;
        queue.push_back(i);
        let mut out = vec![i];
        while let Some(u) = queue.pop_front() {
            if dist[u] == rho {
                continue;
            }
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Distances from `i` to every label (`usize::MAX` when unreachable).
    pub fn distances_from(&self, i: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        dist[i] = 0;
        queue.push_back(i);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<usize> {
        let d = self.distances_from(i)[j];
        (d != usize::MAX).then_some(d)
    }

    /// Largest finite pairwise distance. Quadratic; intended for desk scale.
    pub fn diameter(&self) -> usize {
        let mut diam = 0;
        for i in 0..self.n {
            for d in self.distances_from(i) {
                if d != usize::MAX {
                    diam = diam.max(d);
                }
            }
        }
        diam
    }

    /// Least-squares exponent of ball growth, `log card(ball(ρ)) ≈ d log ρ`,
    /// sampled from a few centers. Stands in for the geometric dimension on
    /// graphs without one.
    pub fn fitted_ball_dimension(&self) -> f64 {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let centers = [0, self.n / 2, self.n.saturating_sub(1)];
        for rho in 1..=4usize {
            for &c in &centers {
                let card = self.ball(c, rho).len();
                if card > 1 {
                    xs.push((rho as f64).ln());
                    ys.push((card as f64).ln());
                }
            }
        }
        if xs.len() < 2 {
            return 1.0;
        }
        ols_slope(&xs, &ys).max(1.0)
    }
}

/// Ordinary least-squares slope of y against x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// Builds the level-k graph distance from the matrix pattern: labels `i, j`
/// are adjacent iff `A_{s,t} ≠ 0` for some dofs with level-k ancestors `i, j`.
pub fn build_level_distance(a: &SparseMatrix, tree: &IndexTree, k: usize) -> LevelGraphDistance {
    let n_dofs = a.nrows();
    let nk = tree.level_size(k);
    let anc: Vec<usize> = (0..n_dofs).map(|d| tree.ancestor_of_dof(d, k)).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for s in 0..n_dofs {
        let (cols, _) = a.row(s);
        for &t in cols {
            let (i, j) = (anc[s], anc[t]);
            if i != j {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let mut adj_offsets = vec![0usize; nk + 1];
    for &(i, _) in &pairs {
        adj_offsets[i + 1] += 1;
    }
    for i in 0..nk {
        adj_offsets[i + 1] += adj_offsets[i];
    }
    let adj_targets = pairs.into_iter().map(|(_, j)| j).collect();
    LevelGraphDistance {
        level: k,
        n: nk,
        adj_offsets,
        adj_targets,
    }
}

/// Per-level localization radii and inner-solve accuracy targets.
#[derive(Debug, Clone, Serialize)]
pub struct LocalizationSchedule {
    pub h: f64,
    pub epsilon: f64,
    pub c_a: f64,
    /// Ball-growth exponent used in the ball-solve accuracy target.
    pub dimension: f64,
    /// `rho[k-1]` is the radius for level k, `k = 1..=q`.
    pub rho: Vec<usize>,
    /// Subband coefficient-solve accuracy `ε/(2k²)`, `k = 2..=q` at `[k-2]`.
    pub subband_tol: Vec<f64>,
    /// Coarse-solve accuracy `ε/2`.
    pub coarse_tol: f64,
    /// Ball-solve accuracy `C_a⁻¹ H^(3-k+k·d/2) ε/k²`, `k = 2..=q` at `[k-2]`.
    pub ball_tol: Vec<f64>,
}

impl LocalizationSchedule {
    /// The default radius rule: `ρ_k = ⌈C_a ((1 + 1/ln(1/H)) k ln(1/H) + ln(1/ε))⌉`.
    pub fn default_schedule(h: f64, q: usize, epsilon: f64, c_a: f64) -> Self {
        Self::with_dimension(h, q, epsilon, c_a, 2.0)
    }

    pub fn with_dimension(h: f64, q: usize, epsilon: f64, c_a: f64, dimension: f64) -> Self {
        assert!(h > 0.0 && h < 1.0, "H must lie in (0,1)");
        assert!(epsilon > 0.0 && epsilon < 1.0, "ε must lie in (0,1)");
        assert!(c_a > 0.0, "C_a must be positive");
        let log_inv_h = (1.0 / h).ln();
        let rho = (1..=q)
            .map(|k| {
                let raw =
                    c_a * ((1.0 + 1.0 / log_inv_h) * k as f64 * log_inv_h + (1.0 / epsilon).ln());
                raw.ceil().max(0.0) as usize
            })
            .collect();
        Self::from_radii(h, q, epsilon, c_a, dimension, rho)
    }

    /// A schedule with one radius for every level.
    pub fn uniform(h: f64, q: usize, epsilon: f64, rho: usize) -> Self {
        Self::from_radii(h, q, epsilon, 1.0, 2.0, vec![rho; q])
    }

    /// Radii large enough that no ball ever truncates.
    pub fn full(h: f64, q: usize, n_dofs: usize) -> Self {
        Self::from_radii(h, q, 1e-12, 1.0, 2.0, vec![n_dofs; q])
    }

    fn from_radii(
        h: f64,
        q: usize,
        epsilon: f64,
        c_a: f64,
        dimension: f64,
        rho: Vec<usize>,
    ) -> Self {
        let subband_tol = (2..=q).map(|k| epsilon / (2.0 * (k * k) as f64)).collect();
        let ball_tol = (2..=q)
            .map(|k| {
                let exponent = 3.0 - k as f64 + k as f64 * dimension / 2.0;
                h.powf(exponent) * epsilon / (c_a * (k * k) as f64)
            })
            .collect();
        LocalizationSchedule {
            h,
            epsilon,
            c_a,
            dimension,
            rho,
            subband_tol,
            coarse_tol: epsilon / 2.0,
            ball_tol,
        }
    }

    pub fn depth(&self) -> usize {
        self.rho.len()
    }

    pub fn rho_at(&self, k: usize) -> usize {
        self.rho[k - 1]
    }
}

/// Ball submatrices up to this size are factored densely inside
/// [`localized_inverse`]; larger balls fall back to conjugate gradient.
const BALL_DENSE_CAP: usize = 96;

/// `Inv_ρ`: for each target column `i`, restricts the system to the wavelet
/// rows whose parent cell lies within distance `rho` of `i` (in the
/// level-(k-1) distance `dist`), solves the ball system, and scatters the
/// result; entries outside the ball stay structurally zero.
///
/// `rhs` is the full right-hand-side block (`J^(k) × I^(k-1)`); `j_parent`
/// maps wavelet rows to their parent cells.
pub fn localized_inverse(
    b_loc: &SparseMatrix,
    rhs: &SparseMatrix,
    dist: &LevelGraphDistance,
    j_parent: &[usize],
    rho: usize,
    tol: f64,
) -> Result<SparseMatrix> {
    let nj = b_loc.nrows();
    assert_eq!(rhs.nrows(), nj, "rhs row count mismatch");
    assert_eq!(j_parent.len(), nj, "wavelet parent table mismatch");
    let n_targets = rhs.ncols();
    // group wavelet rows by parent cell for fast ball → row-set expansion
    let mut cell_rows: Vec<Vec<usize>> = vec![Vec::new(); dist.n_labels()];
    for (j, &p) in j_parent.iter().enumerate() {
        cell_rows[p].push(j);
    }
    let rhs_t = rhs.transpose();
    let columns: Vec<Vec<(usize, f64)>> = (0..n_targets)
        .into_par_iter()
        .map_init(
            || vec![usize::MAX; nj], // per-thread scratch, reset per column
            |index_of, i| {
                let cells = dist.ball(i, rho);
                let mut subset: Vec<usize> = cells
                    .iter()
                    .flat_map(|&c| cell_rows[c].iter().copied())
                    .collect();
                subset.sort_unstable();
                if subset.is_empty() {
                    return Ok(Vec::new());
                }
                for (local, &g) in subset.iter().enumerate() {
                    index_of[g] = local;
                }
                let x = b_loc.principal_submatrix(&subset, index_of);
                let mut z = vec![0.0; subset.len()];
                let (rcols, rvals) = rhs_t.row(i);
                for (&j, &v) in rcols.iter().zip(rvals) {
                    if index_of[j] != usize::MAX {
                        z[index_of[j]] = v;
                    }
                }
                for &g in &subset {
                    index_of[g] = usize::MAX;
                }
                let y = solve_ball(&x, &z, tol).map_err(|e| {
                    Error::Structure(format!("ball solve at target {i} failed: {e}"))
                })?;
                Ok(subset.into_iter().zip(y).collect())
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut triplets = Vec::new();
    for (i, col) in columns.into_iter().enumerate() {
        for (j, v) in col {
            if v != 0.0 {
                triplets.push((j, i, v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(nj, n_targets, triplets))
}

fn solve_ball(x: &SparseMatrix, z: &[f64], tol: f64) -> Result<Vec<f64>> {
    if x.nrows() <= BALL_DENSE_CAP {
        Ok(x.to_dense().cholesky()?.solve_vec(z))
    } else {
        cg_solve_strict(
            x,
            z,
            CgOptions {
                tol: tol.clamp(1e-14, 1e-8),
                max_iters: 100_000,
                jacobi: false,
            },
        )
        .map(|s| s.x)
    }
}

/// `Trun`: zeroes every entry `(i, j)` whose level-(k-2) ancestors are more
/// than `2ρ` apart, then symmetrizes. `parents` maps the matrix's labels to
/// their ancestors at the distance's level.
pub fn truncate(
    m: &SparseMatrix,
    dist: &LevelGraphDistance,
    parents: &[usize],
    rho: usize,
) -> SparseMatrix {
    assert_eq!(m.nrows(), m.ncols(), "truncation expects a square matrix");
    assert_eq!(parents.len(), m.nrows(), "ancestor table mismatch");
    // distance masks are shared by all labels under one ancestor
    let mut mask_cache: std::collections::HashMap<usize, Vec<bool>> =
        std::collections::HashMap::new();
    let masked = m.filter(|i, j| {
        let (pi, pj) = (parents[i], parents[j]);
        let mask = mask_cache.entry(pi).or_insert_with(|| {
            let mut mask = vec![false; dist.n_labels()];
            for c in dist.ball(pi, 2 * rho) {
                mask[c] = true;
            }
            mask
        });
        mask[pj]
    });
    masked.symmetrize()
}

/// Localized counterparts of the exact per-level operators.
#[derive(Debug, Clone)]
pub struct LocalizedLevel {
    pub a: SparseMatrix,
    pub b: Option<SparseMatrix>,
    pub d: Option<SparseMatrix>,
    pub r: Option<SparseMatrix>,
    pub psi: SparseMatrix,
    pub chi: Option<SparseMatrix>,
}

/// Output of the localized transform: per-level operators plus bookkeeping
/// for the manifest (stored nonzeros per level).
#[derive(Debug, Clone)]
pub struct LocalizedHierarchy {
    levels: Vec<LocalizedLevel>,
    pub schedule: LocalizationSchedule,
}

impl LocalizedHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &LocalizedLevel {
        &self.levels[k - 1]
    }

    /// Stored nonzeros per level (A, B, R, Ψ, X together).
    pub fn nnz_per_level(&self) -> Vec<usize> {
        self.levels
            .iter()
            .map(|l| {
                l.a.nnz()
                    + l.b.as_ref().map_or(0, SparseMatrix::nnz)
                    + l.r.as_ref().map_or(0, SparseMatrix::nnz)
                    + l.psi.nnz()
                    + l.chi.as_ref().map_or(0, SparseMatrix::nnz)
            })
            .collect()
    }

    pub fn total_nnz(&self) -> usize {
        self.nnz_per_level().iter().sum()
    }
}

/// Runs the localized transform and solve. Returns the subband solution and
/// the localized hierarchy.
pub fn fast_gamblet_solve(
    a: &SparseMatrix,
    ops: &HierarchyOperators,
    tree: &IndexTree,
    g: &[f64],
    schedule: &LocalizationSchedule,
) -> Result<(SubbandSolution, LocalizedHierarchy)> {
    let q = ops.depth();
    let n = ops.n_dofs();
    assert_eq!(g.len(), n, "right-hand side length mismatch");
    if schedule.depth() != q {
        return Err(Error::Structure(format!(
            "schedule covers {} levels, hierarchy has {q}",
            schedule.depth()
        )));
    }
    let mut ops_local = ops.clone();
    ops_local.derive_wavelet_parents(tree)?;

    // d^(k) for k = 1..q-1: Inv at level k reads d^(k-1), Trun reads d^(k-2)
    let dists: Vec<LevelGraphDistance> = (1..q).map(|k| build_level_distance(a, tree, k)).collect();
    let dist_at = |k: usize| -> &LevelGraphDistance { &dists[k - 1] };

    let mut levels_rev: Vec<LocalizedLevel> = Vec::with_capacity(q);
    let mut v = vec![Vec::new(); q];
    let mut w_out = vec![Vec::new(); q];
    let mut b_out = vec![Vec::new(); q];

    let mut a_k = a.clone();
    let mut psi_k = SparseMatrix::identity(n);
    let mut g_k = g.to_vec();
    for k in (2..=q).rev() {
        let w = ops.w_level(k);
        let b = w.matmul(&a_k.matmul(&w.transpose())).symmetrize();

        // subband coefficients at the schedule's accuracy target
        let rhs = w.mul_vec(&g_k);
        let w_k = cg_solve_strict(
            &b,
            &rhs,
            CgOptions {
                tol: schedule.subband_tol[k - 2].clamp(1e-14, 1e-4),
                max_iters: 100_000,
                jacobi: false,
            },
        )
        .map_err(|e| e.at_level(k))?
        .x;
        let chi = w.matmul(&psi_k);
        v[k - 1] = chi.mul_vec_transposed(&w_k);
        w_out[k - 1] = w_k;
        b_out[k - 1] = g_k.clone();

        // D^(k,k-1) = Inv_ρ(B, W A π̄ᵀ) on balls of the level-(k-1) distance
        let pi_bar = pseudo_inverse_pi(ops.pi_level(k - 1)).map_err(|e| e.at_level(k))?;
        let rhs_block = w.matmul(&a_k).matmul(&pi_bar.transpose());
        let d = localized_inverse(
            &b,
            &rhs_block,
            dist_at(k - 1),
            ops_local.wavelet_parents(k).ok_or_else(|| {
                Error::Structure("fast transform requires cellular wavelets".into())
            })?,
            schedule.rho_at(k - 1),
            schedule.ball_tol[k - 2],
        )
        .map_err(|e| e.at_level(k))?;
        let r = pi_bar.add_scaled(1.0, &d.transpose().matmul(w), -1.0);

        let coarse = r.matmul(&a_k).matmul(&r.transpose());
        let a_next = if k >= 3 {
            let nk1 = ops.level_size(k - 1);
            // labels of A^(k-1) live at level k-1 < q, so tree labels apply
            let parents: Vec<usize> = (0..nk1).map(|i| tree.ancestor(k - 1, i, k - 2)).collect();
            truncate(&coarse, dist_at(k - 2), &parents, schedule.rho_at(k - 2))
        } else {
            coarse.symmetrize()
        };
        let psi_next = r.matmul(&psi_k);
        g_k = r.mul_vec(&g_k);

        levels_rev.push(LocalizedLevel {
            a: a_k,
            b: Some(b),
            d: Some(d),
            r: Some(r),
            psi: psi_k,
            chi: Some(chi),
        });
        a_k = a_next;
        psi_k = psi_next;
    }
    // coarse solve at accuracy ε/2
    let w_1 = if a_k.nrows() <= 512 {
        a_k.to_dense()
            .cholesky()
            .map_err(|e| e.at_level(1))?
            .solve_vec(&g_k)
    } else {
        cg_solve_strict(
            &a_k,
            &g_k,
            CgOptions {
                tol: schedule.coarse_tol.clamp(1e-14, 1e-4),
                max_iters: 100_000,
                jacobi: false,
            },
        )
        .map_err(|e| e.at_level(1))?
        .x
    };
    v[0] = psi_k.mul_vec_transposed(&w_1);
    w_out[0] = w_1;
    b_out[0] = g_k;

    levels_rev.push(LocalizedLevel {
        a: a_k,
        b: None,
        d: None,
        r: None,
        psi: psi_k,
        chi: None,
    });
    levels_rev.reverse();

    let mut u = vec![0.0; n];
    for vk in &v {
        u = axpy(&u, 1.0, vk);
    }
    Ok((
        SubbandSolution {
            v,
            w: w_out,
            b: b_out,
            u,
        },
        LocalizedHierarchy {
            levels: levels_rev,
            schedule: schedule.clone(),
        },
    ))
}

/// Doubling search for the radius constant: the smallest `C_a` from
/// `candidates` whose schedule meets `|u_exact - u_loc|_A ≤ ε |u_exact|_A`
/// for every requested `ε`.
pub fn calibrate_c_a(
    a: &SparseMatrix,
    ops: &HierarchyOperators,
    tree: &IndexTree,
    g: &[f64],
    h_param: f64,
    eps_list: &[f64],
    candidates: &[f64],
) -> Result<f64> {
    let exact_h =
        crate::transform::gamblet_transform(a, ops, crate::transform::TransformConfig::default())?;
    let exact = crate::transform::gamblet_solve(&exact_h, ops, g)?;
    let scale = crate::sparse::m_norm(a, &exact.u);
    for &c_a in candidates {
        let mut ok = true;
        for &eps in eps_list {
            let schedule = LocalizationSchedule::default_schedule(h_param, ops.depth(), eps, c_a);
            let (loc, _) = fast_gamblet_solve(a, ops, tree, g, &schedule)?;
            let err = crate::sparse::m_norm(a, &axpy(&exact.u, -1.0, &loc.u));
            if err > eps * scale {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(c_a);
        }
    }
    Err(Error::NotConverged {
        what: "radius-constant calibration".into(),
        achieved: f64::NAN,
        target: *eps_list.last().unwrap_or(&0.0),
    })
}
