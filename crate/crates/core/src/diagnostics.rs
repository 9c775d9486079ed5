//! Quantitative verification of the method's guarantees: condition numbers,
//! per-subband eigenvalue ranges, error decay across levels, subband
//! energies, Poincaré-type constants, basis decay profiles, and posterior
//! error covariances.
//!
//! Everything here is a pure measurement over immutable inputs. Dense
//! computations (inverses, generalized eigenproblems) are capped at
//! [`crate::sparse::dense::DENSE_CAP`] unknowns; they are O(N³) oracles by
//! design, not production paths.

use crate::fast::{ols_slope, LevelGraphDistance};
use crate::hierarchy::{HierarchyOperators, IndexTree};
use crate::sparse::{
    axpy, cg_solve_strict, dense::DENSE_CAP, m_norm, norm, sym_eigen, CgOptions, DenseMatrix,
    SparseMatrix,
};
use crate::transform::{gamblet_solve, GambletHierarchy, SubbandSolution};
use crate::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// Named scalar metrics, named curves, and provenance notes, serializable as
/// `{"metrics": {...}, "curves": {...}, "notes": {...}}`.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DiagnosticReport {
    pub metrics: BTreeMap<String, f64>,
    pub curves: BTreeMap<String, Vec<(f64, f64)>>,
    pub notes: BTreeMap<String, String>,
}

impl DiagnosticReport {
    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn curve(&mut self, name: impl Into<String>, points: Vec<(f64, f64)>) {
        self.curves.insert(name.into(), points);
    }

    pub fn note(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.notes.insert(name.into(), text.into());
    }

    pub fn merge(&mut self, other: DiagnosticReport) {
        self.metrics.extend(other.metrics);
        self.curves.extend(other.curves);
        self.notes.extend(other.notes);
    }

    /// All values finite and every curve nonempty.
    pub fn is_well_formed(&self) -> bool {
        self.metrics.values().all(|v| v.is_finite())
            && self
                .curves
                .values()
                .all(|c| !c.is_empty() && c.iter().all(|(x, y)| x.is_finite() && y.is_finite()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Extreme eigenvalues and their ratio.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EigenExtremes {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
}

fn seeded_unit_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d) | 1;
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    let nn = norm(&x).max(f64::MIN_POSITIVE);
    x.iter_mut().for_each(|v| *v /= nn);
    x
}

/// λ_max by power iteration and λ_min by inverse iteration (inner solves by
/// CG), each to relative tolerance `tol` on the Rayleigh quotient.
pub fn extreme_eigs(m: &SparseMatrix, tol: f64) -> Result<EigenExtremes> {
    assert_eq!(m.nrows(), m.ncols(), "extreme_eigs expects a square matrix");
    let n = m.nrows();
    if n == 1 {
        let v = m.get(0, 0);
        return Ok(EigenExtremes {
            lambda_min: v,
            lambda_max: v,
            cond: 1.0,
        });
    }
    let max_iters = 50_000;

    // power iteration
    let mut x = seeded_unit_vector(n, 11);
    let mut lambda_max = 0.0f64;
    let mut converged = false;
    for _ in 0..max_iters {
        let mx = m.mul_vec(&x);
        let rq = crate::sparse::dot(&x, &mx);
        let nn = norm(&mx);
        if nn == 0.0 {
            lambda_max = 0.0;
            converged = true;
            break;
        }
        x = mx.iter().map(|v| v / nn).collect();
        if (rq - lambda_max).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
            lambda_max = rq;
            converged = true;
            break;
        }
        lambda_max = rq;
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "power iteration".into(),
            achieved: f64::NAN,
            target: tol,
        });
    }

    // inverse iteration; μ_max of M⁻¹ gives λ_min of M
    let inner = CgOptions {
        tol: (tol * 1e-2).clamp(1e-14, 1e-8),
        max_iters: 200_000,
        jacobi: false,
    };
    let mut y = seeded_unit_vector(n, 29);
    let mut mu = 0.0f64;
    converged = false;
    for _ in 0..max_iters {
        let z = cg_solve_strict(m, &y, inner)?.x;
        let rq = crate::sparse::dot(&y, &z);
        let nn = norm(&z);
        if nn == 0.0 {
            break;
        }
        y = z.iter().map(|v| v / nn).collect();
        if (rq - mu).abs() <= tol * rq.abs().max(f64::MIN_POSITIVE) {
            mu = rq;
            converged = true;
            break;
        }
        mu = rq;
    }
    if !converged || mu <= 0.0 {
        return Err(Error::NotConverged {
            what: "inverse iteration".into(),
            achieved: mu,
            target: tol,
        });
    }
    let lambda_min = 1.0 / mu;
    Ok(EigenExtremes {
        lambda_min,
        lambda_max,
        cond: lambda_max / lambda_min,
    })
}

/// Extremes of the generalized Rayleigh quotient `cᵀS c / cᵀG c` via the
/// pencil `(S, G)`, dense.
fn pencil_extremes(s: &DenseMatrix, g: &DenseMatrix) -> Result<(f64, f64)> {
    let chol = g.cholesky().map_err(|e| match e {
        Error::NotSpd { pivot, value } => Error::RankDeficient(format!(
            "pencil right-hand matrix not positive definite (pivot {pivot}: {value:.3e})"
        )),
        other => other,
    })?;
    // M = L⁻¹ S L⁻ᵀ
    let n = s.nrows();
    let mut m = DenseMatrix::zeros(n, n);
    // columns of L⁻¹ S: solve L x = column, then apply L⁻¹ again on the right
    let mut tmp = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let col = chol.forward_solve(&s.col_to_vec(j));
        for i in 0..n {
            tmp[(i, j)] = col[i];
        }
    }
    let tmp_t = tmp.transpose();
    for j in 0..n {
        let col = chol.forward_solve(&tmp_t.col_to_vec(j));
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    let msym = m.add_scaled(0.5, &m.transpose(), 0.5);
    let (eigs, _) = sym_eigen(&msym)?;
    Ok((eigs[0], *eigs.last().unwrap()))
}

/// Per-subband ranges of `λ_min(A) · vᵀAv / |Av|²`: entry 0 for the coarse
/// space, entries `k-1` for the level-k wavelet subbands. Exact extremes via
/// the dense pencil `(S, (XA)(XA)ᵀ)` with `S = A^(1)` or `B^(k)`.
pub fn eigen_ranges(
    h: &GambletHierarchy,
    a: &SparseMatrix,
    lambda_min_a: f64,
) -> Result<Vec<(f64, f64)>> {
    if a.nrows() > DENSE_CAP {
        return Err(Error::Capacity(format!(
            "eigen_ranges is a dense oracle; {} unknowns exceed the {DENSE_CAP} cap",
            a.nrows()
        )));
    }
    let q = h.depth();
    let mut out = Vec::with_capacity(q);
    for k in 1..=q {
        let (basis, s) = if k == 1 {
            (&h.level(1).psi, &h.level(1).a)
        } else {
            (
                h.level(k).chi.as_ref().unwrap(),
                h.level(k).b.as_ref().unwrap(),
            )
        };
        let xa = basis.matmul(a);
        let g = xa.matmul(&xa.transpose()).to_dense();
        let (lo, hi) = pencil_extremes(&s.to_dense(), &g)?;
        out.push((lambda_min_a * lo, lambda_min_a * hi));
    }
    Ok(out)
}

/// `|u - u^(k)|_A` for `k = 1..q`, where `u^(k)` sums the first k subbands.
pub fn error_curve(
    h: &GambletHierarchy,
    ops: &HierarchyOperators,
    a: &SparseMatrix,
    b: &[f64],
) -> Result<Vec<f64>> {
    let s = gamblet_solve(h, ops, b)?;
    let mut partial = vec![0.0; s.u.len()];
    let mut curve = Vec::with_capacity(h.depth());
    for vk in &s.v {
        partial = axpy(&partial, 1.0, vk);
        let diff = axpy(&s.u, -1.0, &partial);
        curve.push(m_norm(a, &diff));
    }
    Ok(curve)
}

/// Per-level energies `|v^(k)|_A²` and their shares of the total.
pub fn subband_energy(s: &SubbandSolution, a: &SparseMatrix) -> (Vec<f64>, Vec<f64>) {
    let energies: Vec<f64> = s.v.iter().map(|vk| a.bilinear(vk, vk)).collect();
    let total: f64 = energies.iter().sum();
    let shares = energies
        .iter()
        .map(|e| if total > 0.0 { e / total } else { 0.0 })
        .collect();
    (energies, shares)
}

/// Poincaré-side measurements: per level the infimum of `√(xᵀA⁻¹x)/|x|` over
/// the nesting-chain image and the supremum over its kernel, plus log-linear
/// fits of both against the level index.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    /// inf over Img(π^(q,k)), k = 1..=q.
    pub inf_image: Vec<f64>,
    /// sup over Ker(π^(k,q)), k = 1..=q-1.
    pub sup_kernel: Vec<f64>,
    /// exp of the OLS slope of ln(inf_image) against k.
    pub fitted_h_image: f64,
    /// exp of the OLS slope of ln(sup_kernel) against k.
    pub fitted_h_kernel: f64,
    /// geometric mean of the two fitted rates; the headline estimate.
    pub fitted_h: f64,
    /// empirical constant `sup_kernel[k] √λ_min(A) / H^k`, maximized over k.
    pub fitted_c: f64,
}

/// Measures the Poincaré-type constants through dense `A⁻¹` quadratic forms.
/// The kernel of `π^(k,q)` is spanned by stacking `W^(j) π^(j,q)` for
/// `j = k+1..=q`.
pub fn poincare_constants(
    a: &SparseMatrix,
    ops: &HierarchyOperators,
    lambda_min_a: f64,
) -> Result<PoincareReport> {
    let n = a.nrows();
    if n > DENSE_CAP {
        return Err(Error::Capacity(format!(
            "poincare_constants is a dense oracle; {n} unknowns exceed the {DENSE_CAP} cap"
        )));
    }
    let q = ops.depth();
    let a_chol = a.to_dense().cholesky()?;
    let quad_extremes = |rows: &SparseMatrix| -> Result<(f64, f64)> {
        // extremes of yᵀ U A⁻¹ Uᵀ y / yᵀ U Uᵀ y for U = rows
        let ut = rows.to_dense().transpose();
        let ainv_ut = a_chol.solve_mat(&ut);
        let s = rows.to_dense().matmul(&ainv_ut);
        let g = rows.to_dense().matmul(&ut);
        pencil_extremes(&s.add_scaled(0.5, &s.transpose(), 0.5), &g)
    };
    let mut inf_image = Vec::with_capacity(q);
    for k in 1..=q {
        let chain = ops.pi_chain(k);
        let (lo, _) = quad_extremes(&chain)?;
        inf_image.push(lo.max(0.0).sqrt());
    }
    let mut sup_kernel = Vec::with_capacity(q.saturating_sub(1));
    for k in 1..q {
        // stack W^(j) π^(j,q), j = k+1..=q
        let mut blocks: Vec<SparseMatrix> = Vec::new();
        for j in k + 1..=q {
            blocks.push(ops.w_level(j).matmul(&ops.pi_chain(j)));
        }
        let total_rows: usize = blocks.iter().map(SparseMatrix::nrows).sum();
        let mut triplets = Vec::new();
        let mut base = 0usize;
        for blk in &blocks {
            for i in 0..blk.nrows() {
                let (cols, vals) = blk.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    triplets.push((base + i, j, v));
                }
            }
            base += blk.nrows();
        }
        let u = SparseMatrix::from_triplets(total_rows, n, triplets);
        let (_, hi) = quad_extremes(&u)?;
        sup_kernel.push(hi.max(0.0).sqrt());
    }
    let fit = |vals: &[f64], k0: usize| -> f64 {
        let pts: Vec<(f64, f64)> = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, v)| ((i + k0) as f64, v.ln()))
            .collect();
        if pts.len() < 2 {
            return f64::NAN;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        ols_slope(&xs, &ys).exp()
    };
    let fitted_h_image = fit(&inf_image, 1);
    let fitted_h_kernel = fit(&sup_kernel, 1);
    let fitted_h = (fitted_h_image * fitted_h_kernel).sqrt();
    let fitted_c = sup_kernel
        .iter()
        .enumerate()
        .map(|(i, v)| v * lambda_min_a.sqrt() / fitted_h.powi(i as i32 + 1))
        .fold(0.0f64, f64::max);
    Ok(PoincareReport {
        inf_image,
        sup_kernel,
        fitted_h_image,
        fitted_h_kernel,
        fitted_h,
        fitted_c,
    })
}

/// Decay profile of one level-k basis row and the matching stiffness row
/// block: max |entry| at each graph distance, with a log-linear fit.
#[derive(Debug, Clone, Serialize)]
pub struct DecayProfile {
    /// (distance, max |ψ entry|) over dofs grouped by ancestor distance.
    pub psi: Vec<(f64, f64)>,
    /// (distance, max |A^(k) entry|) over level-k labels.
    pub stiffness: Vec<(f64, f64)>,
    pub psi_slope: Option<f64>,
    pub psi_r_squared: Option<f64>,
    pub stiffness_slope: Option<f64>,
}

/// Entries below this magnitude are treated as structurally zero in fits.
pub const DECAY_FLOOR: f64 = 1e-14;

/// Least-squares fit of ln(values) against distances `n ≥ 1`; returns
/// (slope, R²) when at least two usable points exist.
pub fn log_linear_fit(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, v)| *n >= 1.0 && *v > DECAY_FLOOR)
        .map(|&(n, v)| (n, v.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1).collect();
    let slope = ols_slope(&xs, &ys);
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let pred = my + slope * (x - mx);
            (y - pred) * (y - pred)
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Some((slope, r2))
}

pub fn decay_profile(
    h: &GambletHierarchy,
    tree: &IndexTree,
    dist: &LevelGraphDistance,
    k: usize,
    i: usize,
) -> DecayProfile {
    let from_i = dist.distances_from(i);
    let psi = &h.level(k).psi;
    let mut psi_max: BTreeMap<usize, f64> = BTreeMap::new();
    {
        let (cols, vals) = psi.row(i);
        for (&dof, &v) in cols.iter().zip(vals) {
            let label = if k == tree.depth() {
                dof
            } else {
                tree.ancestor_of_dof(dof, k)
            };
            let d = from_i[label];
            if d == usize::MAX {
                continue;
            }
            let e = psi_max.entry(d).or_insert(0.0);
            *e = e.max(v.abs());
        }
    }
    let a_k = &h.level(k).a;
    let mut stiff_max: BTreeMap<usize, f64> = BTreeMap::new();
    {
        let (cols, vals) = a_k.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let d = from_i[j];
            if d == usize::MAX {
                continue;
            }
            let e = stiff_max.entry(d).or_insert(0.0);
            *e = e.max(v.abs());
        }
    }
    let psi_pts: Vec<(f64, f64)> = psi_max.into_iter().map(|(n, v)| (n as f64, v)).collect();
    let stiff_pts: Vec<(f64, f64)> = stiff_max.into_iter().map(|(n, v)| (n as f64, v)).collect();
    let psi_fit = log_linear_fit(&psi_pts);
    let stiff_fit = log_linear_fit(&stiff_pts);
    DecayProfile {
        psi: psi_pts,
        stiffness: stiff_pts,
        psi_slope: psi_fit.map(|f| f.0),
        psi_r_squared: psi_fit.map(|f| f.1),
        stiffness_slope: stiff_fit.map(|f| f.0),
    }
}

/// Diagonal of the posterior error covariance
/// `Γ^(k) = (I - Ψ^(k),T π^(k,q)) A⁻¹`: the per-dof variance left after
/// conditioning on the level-k measurements. Zero at `k = q`.
pub fn posterior_cov_diag(
    h: &GambletHierarchy,
    ops: &HierarchyOperators,
    k: usize,
) -> Result<Vec<f64>> {
    let n = h.n_dofs();
    if n > DENSE_CAP {
        return Err(Error::Capacity(format!(
            "posterior_cov_diag is a dense oracle; {n} unknowns exceed the {DENSE_CAP} cap"
        )));
    }
    let a_chol = h.level(h.depth()).a.to_dense().cholesky()?;
    let a_inv = a_chol.solve_mat(&DenseMatrix::identity(n));
    let chain = ops.pi_chain(k); // |I^(k)| × N
    let chain_ainv = chain.to_dense().matmul(&a_inv);
    let psi = &h.level(k).psi;
    let mut diag: Vec<f64> = (0..n).map(|s| a_inv[(s, s)]).collect();
    for i in 0..psi.nrows() {
        let (cols, vals) = psi.row(i);
        for (&s, &v) in cols.iter().zip(vals) {
            diag[s] -= v * chain_ainv[(i, s)];
        }
    }
    Ok(diag)
}

/// Per-level A-norm differences between two subband solutions, plus the
/// total difference of the assembled solutions.
#[derive(Debug, Clone, Serialize)]
pub struct FastVsExact {
    pub per_level: Vec<f64>,
    pub total: f64,
}

pub fn fast_vs_exact_report(
    exact: &SubbandSolution,
    fast: &SubbandSolution,
    a: &SparseMatrix,
) -> Result<FastVsExact> {
    if exact.v.len() != fast.v.len() || exact.u.len() != fast.u.len() {
        return Err(Error::Structure(format!(
            "subband shapes differ: {} vs {} levels, {} vs {} dofs",
            exact.v.len(),
            fast.v.len(),
            exact.u.len(),
            fast.u.len()
        )));
    }
    let per_level = exact
        .v
        .iter()
        .zip(&fast.v)
        .map(|(ve, vf)| m_norm(a, &axpy(ve, -1.0, vf)))
        .collect();
    let total = m_norm(a, &axpy(&exact.u, -1.0, &fast.u));
    Ok(FastVsExact { per_level, total })
}

/// OLS exponent of `values ~ sizes^p` in log-log coordinates.
pub fn fitted_exponent(sizes: &[f64], values: &[f64]) -> f64 {
    let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = values
        .iter()
        .map(|v| v.max(f64::MIN_POSITIVE).ln())
        .collect();
    ols_slope(&xs, &ys)
}
