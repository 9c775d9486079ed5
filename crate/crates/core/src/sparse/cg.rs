//! Conjugate gradient for symmetric positive-definite systems.

use super::{dot, norm, SparseMatrix};
use crate::{Error, Result};

/// Options for [`cg_solve`]. Unpreconditioned by default; the systems this
/// solver faces inside the hierarchy are uniformly well conditioned, so a
/// preconditioner is rarely needed. A Jacobi (diagonal) preconditioner is
/// available by flag for rough standalone systems.
#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-12,
            max_iters: 10_000,
            jacobi: false,
        }
    }
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        CgOptions {
            tol,
            ..Default::default()
        }
    }
}

/// Outcome of a CG solve. `converged == false` means the iteration budget ran
/// out; the best iterate is still returned, never silently dropped.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iters: usize,
    /// Relative 2-norm residual ‖b − Mx‖ / ‖b‖ at exit.
    pub rel_residual: f64,
    /// Estimate of the M-norm error |x* − x|_M from the Hestenes–Stiefel
    /// identity (tail of Σ αⱼ‖rⱼ‖², truncated at exit); a lower-bound proxy.
    pub energy_error_est: f64,
    pub converged: bool,
}

/// Solves `M x = b` for SPD `M`, terminating when the relative residual
/// drops to `opts.tol` or the iteration budget runs out.
pub fn cg_solve(m: &SparseMatrix, b: &[f64], opts: CgOptions) -> Result<CgSolution> {
    assert_eq!(m.nrows(), m.ncols(), "cg_solve requires a square matrix");
    assert_eq!(m.nrows(), b.len(), "cg_solve dimension mismatch");
    assert!(opts.tol > 0.0, "cg_solve requires tol > 0");

    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iters: 0,
            rel_residual: 0.0,
            energy_error_est: 0.0,
            converged: true,
        });
    }
    let inv_diag: Option<Vec<f64>> = opts.jacobi.then(|| {
        m.diagonal()
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    });
    let precond = |r: &[f64]| -> Vec<f64> {
        match &inv_diag {
            Some(d) => r.iter().zip(d).map(|(ri, di)| ri * di).collect(),
            None => r.to_vec(),
        }
    };

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    // tail terms of the Hestenes–Stiefel energy-error identity
    const TAIL: usize = 4;
    let mut tail_terms: Vec<f64> = Vec::with_capacity(TAIL + 1);

    let mut iters = 0;
    let mut rel_residual = 1.0;
    let mut converged = false;
    while iters < opts.max_iters {
        iters += 1;
        let ap = m.mul_vec(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Breakdown {
                iteration: iters,
                detail: format!("pᵀMp = {pap:.3e}; matrix not SPD or values overflowed"),
            });
        }
        let alpha = rz / pap;
        let r_norm2 = dot(&r, &r);
        tail_terms.push(alpha * r_norm2);
        if tail_terms.len() > TAIL {
            tail_terms.remove(0);
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rn = norm(&r);
        if !rn.is_finite() {
            return Err(Error::Breakdown {
                iteration: iters,
                detail: "residual norm became non-finite".into(),
            });
        }
        rel_residual = rn / b_norm;
        if rel_residual <= opts.tol {
            converged = true;
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let energy_error_est = tail_terms.iter().sum::<f64>().max(0.0).sqrt();
    Ok(CgSolution {
        x,
        iters,
        rel_residual,
        energy_error_est,
        converged,
    })
}

/// Like [`cg_solve`] but errors out when the iteration budget is exhausted,
/// for callers that must not proceed with an unconverged solve.
pub fn cg_solve_strict(m: &SparseMatrix, b: &[f64], opts: CgOptions) -> Result<CgSolution> {
    let sol = cg_solve(m, b, opts)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            what: "conjugate gradient".into(),
            achieved: sol.rel_residual,
            target: opts.tol,
        });
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
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

    fn random_spd(rng: &mut StdRng, n: usize) -> SparseMatrix {
        let mut g = crate::sparse::DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut spd = g.matmul(&g.transpose());
        for i in 0..n {
            spd[(i, i)] += n as f64;
        }
        SparseMatrix::from_dense(&spd)
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let sol = cg_solve(
            &SparseMatrix::identity(2),
            &[4.0, 5.0],
            CgOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.iters, 1);
        assert!(sol.converged);
        assert!((sol.x[0] - 4.0).abs() < 1e-14 && (sol.x[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn tridiag_solution_checked_by_forward_product() {
        let m = tridiag(3);
        let sol = cg_solve(&m, &[1.0, 0.0, 1.0], CgOptions::default()).unwrap();
        for xi in &sol.x {
            assert!((xi - 1.0).abs() < 1e-10);
        }
        let back = m.mul_vec(&sol.x);
        assert!((back[0] - 1.0).abs() < 1e-10 && back[1].abs() < 1e-10);
    }

    #[test]
    fn random_spd_matches_dense_factorization() {
        let mut rng = StdRng::seed_from_u64(5);
        let m = random_spd(&mut rng, 8);
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = cg_solve(&m, &b, CgOptions::with_tol(1e-12)).unwrap();
        let dense = m.to_dense();
        let xref = dense
            .solve(&crate::sparse::DenseMatrix::column(&b))
            .unwrap();
        for i in 0..8 {
            assert!((sol.x[i] - xref[(i, 0)]).abs() <= 1e-10);
        }
    }

    #[test]
    fn exhausted_budget_is_flagged_not_silent() {
        let m = tridiag(50);
        let b = vec![1.0; 50];
        let sol = cg_solve(
            &m,
            &b,
            CgOptions {
                tol: 1e-14,
                max_iters: 3,
                jacobi: false,
            },
        )
        .unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iters, 3);
        assert!(cg_solve_strict(
            &m,
            &b,
            CgOptions {
                tol: 1e-14,
                max_iters: 3,
                jacobi: false
            }
        )
        .is_err());
    }

    #[test]
    fn indefinite_matrix_breaks_down_with_iteration_index() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        match cg_solve(&m, &[0.0, 1.0], CgOptions::default()) {
            Err(crate::Error::Breakdown { iteration, .. }) => assert!(iteration >= 1),
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn residual_bound_holds_on_random_spd() {
        // ‖Mx − b‖/‖b‖ ≤ 10 tol for moderately conditioned SPD systems
        let mut rng = StdRng::seed_from_u64(99);
        for n in [4usize, 16, 40] {
            let m = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for tol in [1e-6, 1e-10] {
                let sol = cg_solve(&m, &b, CgOptions::with_tol(tol)).unwrap();
                assert!(sol.converged);
                let r = crate::sparse::axpy(&b, -1.0, &m.mul_vec(&sol.x));
                assert!(norm(&r) / norm(&b) <= 10.0 * tol);
            }
        }
    }

    #[test]
    fn jacobi_flag_still_solves() {
        let mut rng = StdRng::seed_from_u64(1);
        let m = random_spd(&mut rng, 12);
        let b: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = cg_solve(
            &m,
            &b,
            CgOptions {
                tol: 1e-12,
                max_iters: 10_000,
                jacobi: true,
            },
        )
        .unwrap();
        assert!(sol.converged);
        let r = crate::sparse::axpy(&b, -1.0, &m.mul_vec(&sol.x));
        assert!(norm(&r) / norm(&b) <= 1e-11);
    }
}
