//! Test-problem generators: 2D bilinear FEM for `-div(a ∇u)` on the unit
//! square with a rough multiscale coefficient, the two right-hand sides used
//! throughout (smooth trigonometric and discrete Dirac), and regularized
//! graph Laplacians.
//!
//! The grid has `2^q × 2^q` interior nodes (so `(2^q + 1)²` cells); Dirichlet
//! boundary rows are eliminated. Interior nodes are numbered row-major,
//! which is exactly the leaf order of [`IndexTree::grid`] with `dim = 2`,
//! `branch = 2` — each interior node sits in its own fine cell.

use crate::hierarchy::IndexTree;
use crate::sparse::SparseMatrix;
use crate::{Error, Result};

/// Reference-element stiffness for the bilinear element on a square,
/// nodes ordered (0,0), (1,0), (1,1), (0,1). Exact for piecewise-constant
/// coefficients; the cell size cancels in 2D.
pub const BILINEAR_ELEMENT: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// A generated grid problem: the stiffness matrix, the per-cell coefficient
/// field, and node coordinates.
#[derive(Debug, Clone)]
pub struct GridProblem {
    pub q: usize,
    /// Interior nodes per axis, `2^q`.
    pub n_side: usize,
    /// Cell coefficients, row-major over the `(2^q + 1)²` cells.
    pub coeff: Vec<f64>,
    pub matrix: SparseMatrix,
    /// Interior node positions, indexed by dof.
    pub coords: Vec<(f64, f64)>,
}

impl GridProblem {
    pub fn n_dofs(&self) -> usize {
        self.n_side * self.n_side
    }

    /// Ratio `max a / min a` of the coefficient field.
    pub fn contrast(&self) -> f64 {
        let max = self.coeff.iter().fold(f64::MIN, |m, &v| m.max(v));
        let min = self.coeff.iter().fold(f64::MAX, |m, &v| m.min(v));
        max / min
    }

    /// The matching quadtree over the interior nodes.
    pub fn tree(&self) -> Result<IndexTree> {
        IndexTree::grid(2, self.q, 2)
    }
}

/// Number of oscillatory factors in the default coefficient field.
pub const COEFF_FACTORS: usize = 7;
/// Oscillation amplitude of the default coefficient field.
pub const COEFF_AMPLITUDE: f64 = 0.2;

/// The rough multiscale coefficient on cell `(i, j)` of the `(2^q + 1)`-cell
/// grid: a product of cosine/sine factors over `factors` octaves with the
/// given amplitude. Positive whenever `amplitude < 0.5`.
pub fn multiscale_coefficient(q: usize, i: usize, j: usize, factors: usize, amplitude: f64) -> f64 {
    let denom = (1usize << q) as f64 + 1.0;
    let x = i as f64 / denom;
    let y = j as f64 / denom;
    let mut a = 1.0;
    for k in 1..=factors {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        a *= (1.0 + amplitude * (scale * (x + y)).cos())
            * (1.0 + amplitude * (scale * (y - 3.0 * x)).sin());
    }
    a
}

/// Assembles the interior-node stiffness matrix for `-div(a ∇u)` with
/// homogeneous Dirichlet boundary, `a` given per cell.
pub fn assemble_fem(q: usize, a_field: impl Fn(usize, usize) -> f64) -> Result<GridProblem> {
    if q < 2 {
        return Err(Error::Invalid("fem generator requires q ≥ 2".into()));
    }
    let n_side = 1usize << q;
    let n_cells = n_side + 1;
    let h = 1.0 / n_cells as f64;
    let mut coeff = vec![0.0; n_cells * n_cells];
    for cj in 0..n_cells {
        for ci in 0..n_cells {
            let a = a_field(ci, cj);
            // the negated form also rejects NaN
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Invalid(format!(
                    "coefficient at cell ({ci},{cj}) is {a}, must be positive and finite"
                )));
            }
            coeff[cj * n_cells + ci] = a;
        }
    }
    // interior node (gx, gy), 1-based grid indices → dof
    let dof = |gx: usize, gy: usize| -> Option<usize> {
        if gx >= 1 && gx <= n_side && gy >= 1 && gy <= n_side {
            Some((gy - 1) * n_side + (gx - 1))
        } else {
            None
        }
    };
    let mut triplets = Vec::with_capacity(9 * n_side * n_side);
    for cj in 0..n_cells {
        for ci in 0..n_cells {
            let a = coeff[cj * n_cells + ci];
            // cell corners in the element's counterclockwise order
            let nodes = [
                dof(ci, cj),
                dof(ci + 1, cj),
                dof(ci + 1, cj + 1),
                dof(ci, cj + 1),
            ];
            for (r, &ni) in nodes.iter().enumerate() {
                let Some(gi) = ni else { continue };
                for (c, &nj) in nodes.iter().enumerate() {
                    let Some(gj) = nj else { continue };
                    triplets.push((gi, gj, a * BILINEAR_ELEMENT[r][c]));
                }
            }
        }
    }
    let n = n_side * n_side;
    let matrix = SparseMatrix::from_triplets(n, n, triplets);
    debug_assert!(matrix.symmetry_gap() <= 1e-14 * matrix.max_abs());
    let coords = (0..n)
        .map(|d| {
            let gx = d % n_side + 1;
            let gy = d / n_side + 1;
            (gx as f64 * h, gy as f64 * h)
        })
        .collect();
    Ok(GridProblem {
        q,
        n_side,
        coeff,
        matrix,
        coords,
    })
}

/// The standard problem: FEM with the multiscale coefficient at its defaults.
pub fn standard_fem(q: usize) -> Result<GridProblem> {
    assemble_fem(q, |i, j| {
        multiscale_coefficient(q, i, j, COEFF_FACTORS, COEFF_AMPLITUDE)
    })
}

/// Weighted graph Laplacian with diagonal regularization:
/// `L_ii = Σ_j w_ij + reg`, `L_ij = -w_ij`. `reg > 0` makes it SPD.
pub fn graph_laplacian(
    edges: &[(usize, usize)],
    weights: &[f64],
    reg: f64,
) -> Result<SparseMatrix> {
    if edges.len() != weights.len() {
        return Err(Error::Invalid(
            "edge and weight lists differ in length".into(),
        ));
    }
    if reg < 0.0 {
        return Err(Error::Invalid("regularization must be ≥ 0".into()));
    }
    let mut n = 0usize;
    for &(i, j) in edges {
        if i == j {
            return Err(Error::Invalid(format!("self-loop at node {i}")));
        }
        n = n.max(i + 1).max(j + 1);
    }
    let mut triplets = Vec::with_capacity(4 * edges.len() + n);
    for (&(i, j), &w) in edges.iter().zip(weights) {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(w > 0.0) {
            return Err(Error::Invalid(format!(
                "edge ({i},{j}) has non-positive weight {w}"
            )));
        }
        triplets.push((i, j, -w));
        triplets.push((j, i, -w));
        triplets.push((i, i, w));
        triplets.push((j, j, w));
    }
    for i in 0..n {
        triplets.push((i, i, reg));
    }
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

/// Pointwise value of the smooth right-hand side at position `z = (z1, z2)`.
pub fn smooth_rhs_value(z1: f64, z2: f64) -> f64 {
    (3.0 * z1 + z2).cos() + (3.0 * z2).sin() + (7.0 * z1 - 5.0 * z2).sin()
}

/// Smooth right-hand side: the trigonometric field sampled at the nodes.
pub fn rhs_smooth(prob: &GridProblem) -> Vec<f64> {
    prob.coords
        .iter()
        .map(|&(x, y)| smooth_rhs_value(x, y))
        .collect()
}

/// Index of the central interior node: grid index `2^(q-1)` on both axes
/// (the rounded midpoint of `0..2^q - 1`), row-major.
pub fn dirac_center(q: usize) -> usize {
    let n_side = 1usize << q;
    let c = n_side / 2;
    c * n_side + c
}

/// Discrete Dirac right-hand side: a single spike of mass `4^q` at the
/// central interior node.
pub fn rhs_dirac(prob: &GridProblem) -> Vec<f64> {
    let mut g = vec![0.0; prob.n_dofs()];
    g[dirac_center(prob.q)] = (4.0f64).powi(prob.q as i32);
    g
}

/// Probes a matrix for positive definiteness: random Rayleigh quotients must
/// all be positive, and at desk scale a Cholesky factorization must succeed.
pub fn spd_probe(m: &SparseMatrix, probes: usize, seed: u64) -> Result<()> {
    let n = m.nrows();
    // simple deterministic xorshift; avoids dragging a rand dependency in
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state as f64 / u64::MAX as f64) * 2.0 - 1.0
    };
    for p in 0..probes {
        let x: Vec<f64> = (0..n).map(|_| next()).collect();
        let q = m.bilinear(&x, &x);
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(q > 0.0) {
            return Err(Error::NotSpd { pivot: p, value: q });
        }
    }
    if n <= crate::sparse::dense::DENSE_CAP {
        m.to_dense().cholesky()?;
    }
    Ok(())
}
