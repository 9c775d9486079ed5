//! Index trees and the nesting/wavelet matrices driving the transform.
//!
//! A hierarchy over `N` unknowns is a chain of label sets
//! `I^(1) ⊂ … ⊂ I^(q)` (each level-k label is the k-prefix of the level-q
//! labels below it), a nesting matrix `π^(k,k+1)` expressing level-k
//! measurements in terms of level-(k+1) ones, and wavelet matrices `W^(k)`
//! whose rows span `Ker(π^(k-1,k))`. Level-q labels are identified with the
//! degrees of freedom of the matrix being decomposed, so the columns of
//! `π^(q-1,q)` and `W^(q)` live directly in dof space.

use crate::sparse::{DenseMatrix, SparseMatrix};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Geometry of a regular grid tree (`branch^dim` children per cell).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub dim: usize,
    pub branch: usize,
}

/// Nested label sets with parent/child maps. Level-k labels are contiguous
/// integers `0..|I^(k)|` ordered lexicographically by tuple, so each parent's
/// children form a contiguous range at the next level.
#[derive(Debug, Clone)]
pub struct IndexTree {
    depth: usize,
    level_sizes: Vec<usize>,
    /// `child_offsets[k-1]` has length `|I^(k)|+1`; children of level-k label
    /// `i` are the level-(k+1) labels `child_offsets[k-1][i]..child_offsets[k-1][i+1]`.
    child_offsets: Vec<Vec<usize>>,
    /// `parent[k-2][j]` is the level-(k-1) parent of level-k label `j`.
    parent: Vec<Vec<usize>>,
    /// Level-q label (tree leaf order) → dof index.
    leaf_dof: Vec<usize>,
    /// dof index → level-q label.
    dof_leaf: Vec<usize>,
    grid: Option<GridShape>,
}

/// Cap on the number of leaves a generated tree may have.
pub const LABEL_CAP: usize = 1 << 28;

impl IndexTree {
    /// Builds the tree for a regular grid: `q` levels, `branch^dim` children
    /// per cell, leaves mapped to dofs in row-major order over the grid cells
    /// (axis 0 fastest). `|I^(k)| = branch^(k·dim)`.
    pub fn grid(dim: usize, q: usize, branch: usize) -> Result<IndexTree> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Invalid(format!("dim must be 1, 2, or 3, got {dim}")));
        }
        if branch < 2 {
            return Err(Error::Invalid(format!("branch must be ≥ 2, got {branch}")));
        }
        if q == 0 {
            return Err(Error::Invalid("tree depth must be ≥ 1".into()));
        }
        let cell = branch
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Capacity("branch^dim overflows the label space".into()))?;
        let mut level_sizes = Vec::with_capacity(q);
        let mut size = 1usize;
        for _ in 0..q {
            size = size
                .checked_mul(cell)
                .filter(|&s| s <= LABEL_CAP)
                .ok_or_else(|| Error::Capacity("branch^(q·dim) exceeds the label budget".into()))?;
            level_sizes.push(size);
        }
        let n = level_sizes[q - 1];
        let mut child_offsets = Vec::with_capacity(q.saturating_sub(1));
        let mut parent = Vec::with_capacity(q.saturating_sub(1));
        for k in 1..q {
            let nk = level_sizes[k - 1];
            child_offsets.push((0..=nk).map(|i| i * cell).collect());
            parent.push((0..level_sizes[k]).map(|j| j / cell).collect());
        }
        // leaf position → spatial cell coordinates → row-major dof
        let side = branch.pow(q as u32);
        let mut leaf_dof = vec![0usize; n];
        let mut dof_leaf = vec![0usize; n];
        for (p, slot) in leaf_dof.iter_mut().enumerate() {
            let mut coords = vec![0usize; dim];
            let mut rem = p;
            // digits from root to leaf
            let mut digits = vec![0usize; q];
            for m in (0..q).rev() {
                digits[m] = rem % cell;
                rem /= cell;
            }
            for d in digits {
                let mut dd = d;
                for c in coords.iter_mut() {
                    *c = *c * branch + dd % branch;
                    dd /= branch;
                }
            }
            let mut dof = 0usize;
            for a in (0..dim).rev() {
                dof = dof * side + coords[a];
            }
            *slot = dof;
            dof_leaf[dof] = p;
        }
        Ok(IndexTree {
            depth: q,
            level_sizes,
            child_offsets,
            parent,
            leaf_dof,
            dof_leaf,
            grid: Some(GridShape { dim, branch }),
        })
    }

    /// Recovers the tree from cellular operators: the support of each
    /// nesting row is its cell's children, and the level-(q-1) rows list the
    /// dofs of each leaf cell.
    pub fn from_cellular_ops(ops: &HierarchyOperators) -> Result<IndexTree> {
        let q = ops.depth();
        if q == 1 {
            let n = ops.n_dofs();
            return Ok(IndexTree {
                depth: 1,
                level_sizes: vec![n],
                child_offsets: vec![],
                parent: vec![],
                leaf_dof: (0..n).collect(),
                dof_leaf: (0..n).collect(),
                grid: None,
            });
        }
        let mut counts: Vec<Vec<usize>> = Vec::with_capacity(q - 1);
        for k in 1..q {
            let pi = ops.pi_level(k);
            let mut c = Vec::with_capacity(pi.nrows());
            for i in 0..pi.nrows() {
                let (cols, _) = pi.row(i);
                if cols.is_empty() {
                    return Err(Error::Structure(format!(
                        "nesting row {i} at level {k} is empty; cannot recover the tree"
                    )));
                }
                c.push(cols.len());
            }
            if c.iter().sum::<usize>() != pi.ncols() {
                return Err(Error::Structure(format!(
                    "nesting rows at level {k} do not partition level {}",
                    k + 1
                )));
            }
            counts.push(c);
        }
        let mut tree = IndexTree::from_child_counts(&counts)?;
        // leaf order: concatenate the sorted dof supports of the level-(q-1)
        // rows; validate that they partition the dof set
        let pi_last = ops.pi_level(q - 1);
        let n = pi_last.ncols();
        let mut leaf_dof = Vec::with_capacity(n);
        for i in 0..pi_last.nrows() {
            let (cols, _) = pi_last.row(i);
            leaf_dof.extend_from_slice(cols);
        }
        let mut dof_leaf = vec![usize::MAX; n];
        for (leaf, &dof) in leaf_dof.iter().enumerate() {
            if dof_leaf[dof] != usize::MAX {
                return Err(Error::Structure(format!(
                    "dof {dof} appears in two cells; operators are not cellular"
                )));
            }
            dof_leaf[dof] = leaf;
        }
        if dof_leaf.contains(&usize::MAX) {
            return Err(Error::Structure(
                "some dofs are not covered by the nesting rows".into(),
            ));
        }
        tree.leaf_dof = leaf_dof;
        tree.dof_leaf = dof_leaf;
        Ok(tree)
    }

    /// Builds a tree from explicit child ranges: `children[k-1][i]` is the
    /// number of children of level-k label `i`. Leaf order equals dof order.
    pub fn from_child_counts(children: &[Vec<usize>]) -> Result<IndexTree> {
        let q = children.len() + 1;
        let mut level_sizes = vec![children.first().map_or(1, |c| c.len())];
        if level_sizes[0] == 0 {
            return Err(Error::Structure("level 1 must be nonempty".into()));
        }
        let mut child_offsets = Vec::new();
        let mut parent = Vec::new();
        for counts in children {
            let nk = *level_sizes.last().unwrap();
            if counts.len() != nk {
                return Err(Error::Structure(format!(
                    "child count table has {} entries, expected {nk}",
                    counts.len()
                )));
            }
            if counts.contains(&0) {
                return Err(Error::Structure("every label needs ≥ 1 child".into()));
            }
            let mut offsets = Vec::with_capacity(nk + 1);
            offsets.push(0usize);
            for &c in counts {
                offsets.push(offsets.last().unwrap() + c);
            }
            let next_size = *offsets.last().unwrap();
            let mut par = vec![0usize; next_size];
            for (i, win) in offsets.windows(2).enumerate() {
                for p in par.iter_mut().take(win[1]).skip(win[0]) {
                    *p = i;
                }
            }
            child_offsets.push(offsets);
            parent.push(par);
            level_sizes.push(next_size);
        }
        let n = *level_sizes.last().unwrap();
        Ok(IndexTree {
            depth: q,
            level_sizes,
            child_offsets,
            parent,
            leaf_dof: (0..n).collect(),
            dof_leaf: (0..n).collect(),
            grid: None,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `|I^(k)|`, `k` in `1..=q`.
    pub fn level_size(&self, k: usize) -> usize {
        self.level_sizes[k - 1]
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn n_dofs(&self) -> usize {
        *self.level_sizes.last().unwrap()
    }

    pub fn grid_shape(&self) -> Option<GridShape> {
        self.grid
    }

    /// Children (level-(k+1) labels) of level-k label `i`.
    pub fn children(&self, k: usize, i: usize) -> std::ops::Range<usize> {
        let co = &self.child_offsets[k - 1];
        co[i]..co[i + 1]
    }

    /// Parent (level-(k-1) label) of level-k label `j`, `k` in `2..=q`.
    pub fn parent_of(&self, k: usize, j: usize) -> usize {
        self.parent[k - 2][j]
    }

    /// Level-k ancestor of a level-q leaf position.
    pub fn ancestor_of_leaf(&self, leaf: usize, k: usize) -> usize {
        self.ancestor(self.depth, leaf, k)
    }

    /// Ancestor at level `k_to ≤ k_from` of a level-`k_from` label.
    pub fn ancestor(&self, k_from: usize, label: usize, k_to: usize) -> usize {
        let mut label = label;
        for level in (k_to + 1..=k_from).rev() {
            label = self.parent_of(level, label);
        }
        label
    }

    /// Level-k ancestor of a dof.
    pub fn ancestor_of_dof(&self, dof: usize, k: usize) -> usize {
        self.ancestor_of_leaf(self.dof_leaf[dof], k)
    }

    pub fn leaf_to_dof(&self, leaf: usize) -> usize {
        self.leaf_dof[leaf]
    }

    pub fn dof_to_leaf(&self, dof: usize) -> usize {
        self.dof_leaf[dof]
    }

    /// The k-tuple of a level-k label: positions among siblings from the root
    /// down.
    pub fn tuple_of(&self, k: usize, label: usize) -> Vec<usize> {
        let mut digits = vec![0usize; k];
        let mut cur = label;
        for level in (2..=k).rev() {
            let p = self.parent_of(level, cur);
            digits[level - 1] = cur - self.child_offsets[level - 2][p];
            cur = p;
        }
        digits[0] = cur;
        digits
    }

    /// Spatial box `[lo, hi)` of a level-k cell, for grid trees.
    pub fn cell_box(&self, k: usize, label: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let shape = self.grid?;
        let digits = self.tuple_of(k, label);
        let mut coords = vec![0usize; shape.dim];
        for d in digits {
            let mut dd = d;
            for c in coords.iter_mut() {
                *c = *c * shape.branch + dd % shape.branch;
                dd /= shape.branch;
            }
        }
        let h = (shape.branch as f64).powi(-(k as i32));
        let lo: Vec<f64> = coords.iter().map(|&c| c as f64 * h).collect();
        let hi: Vec<f64> = coords.iter().map(|&c| (c + 1) as f64 * h).collect();
        Some((lo, hi))
    }
}

/// The nesting and wavelet matrices over an index tree, plus the flags the
/// downstream algorithms rely on. Immutable once built.
#[derive(Debug, Clone)]
pub struct HierarchyOperators {
    level_sizes: Vec<usize>,
    /// `pi[k-1] = π^(k,k+1)`, `k = 1..q-1`.
    pi: Vec<SparseMatrix>,
    /// `w[k-2] = W^(k)`, `k = 2..q`.
    w: Vec<SparseMatrix>,
    /// Per wavelet level: row → parent cell label at level k-1. Available when
    /// the wavelets are cellular.
    j_parent: Option<Vec<Vec<usize>>>,
    orthonormal: bool,
    cellular: bool,
}

/// Sidecar metadata stored next to the π/W Matrix Market files.
#[derive(Debug, Serialize, Deserialize)]
pub struct OperatorSidecar {
    pub depth: usize,
    pub level_sizes: Vec<usize>,
    pub wavelet_sizes: Vec<usize>,
    pub orthonormal: bool,
    pub cellular: bool,
}

impl HierarchyOperators {
    /// Assembles operators from parts, validating the chained shapes and the
    /// complementary-dimension requirement `|J^(k)| = |I^(k)| - |I^(k-1)|`.
    pub fn new(
        level_sizes: Vec<usize>,
        pi: Vec<SparseMatrix>,
        w: Vec<SparseMatrix>,
        j_parent: Option<Vec<Vec<usize>>>,
        orthonormal: bool,
        cellular: bool,
    ) -> Result<Self> {
        let q = level_sizes.len();
        if q == 0 {
            return Err(Error::Structure(
                "hierarchy needs at least one level".into(),
            ));
        }
        if pi.len() + 1 != q || w.len() + 1 != q {
            return Err(Error::Structure(format!(
                "depth {q} needs {} nesting and {} wavelet matrices, got {} and {}",
                q - 1,
                q - 1,
                pi.len(),
                w.len()
            )));
        }
        for (idx, p) in pi.iter().enumerate() {
            let k = idx + 1;
            if p.nrows() != level_sizes[k - 1] || p.ncols() != level_sizes[k] {
                return Err(Error::Structure(format!(
                    "π at level {k} is {}x{}, expected {}x{}",
                    p.nrows(),
                    p.ncols(),
                    level_sizes[k - 1],
                    level_sizes[k]
                )));
            }
        }
        for (idx, wk) in w.iter().enumerate() {
            let k = idx + 2;
            let expected_rows = level_sizes[k - 1] - level_sizes[k - 2];
            if wk.nrows() != expected_rows || wk.ncols() != level_sizes[k - 1] {
                return Err(Error::Structure(format!(
                    "W at level {k} is {}x{}, expected {}x{}",
                    wk.nrows(),
                    wk.ncols(),
                    expected_rows,
                    level_sizes[k - 1]
                )));
            }
        }
        if let Some(jp) = &j_parent {
            if jp.len() != w.len() {
                return Err(Error::Structure(
                    "wavelet parent table length mismatch".into(),
                ));
            }
            for (idx, parents) in jp.iter().enumerate() {
                if parents.len() != w[idx].nrows() {
                    return Err(Error::Structure(
                        "wavelet parent table row count mismatch".into(),
                    ));
                }
            }
        }
        Ok(HierarchyOperators {
            level_sizes,
            pi,
            w,
            j_parent,
            orthonormal,
            cellular,
        })
    }

    /// The standard construction for a grid tree: orthonormal cellular Haar
    /// nesting rows plus Householder-complement wavelets.
    pub fn standard(tree: &IndexTree) -> Result<Self> {
        let pi = build_haar_pi(tree);
        let (w, j_parent) = build_cellular_w(tree, &pi)?;
        HierarchyOperators::new(
            tree.level_sizes().to_vec(),
            pi,
            w,
            Some(j_parent),
            true,
            true,
        )
    }

    pub fn depth(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn n_dofs(&self) -> usize {
        *self.level_sizes.last().unwrap()
    }

    pub fn level_size(&self, k: usize) -> usize {
        self.level_sizes[k - 1]
    }

    pub fn level_sizes(&self) -> &[usize] {
        &self.level_sizes
    }

    pub fn wavelet_size(&self, k: usize) -> usize {
        self.w[k - 2].nrows()
    }

    /// `π^(k,k+1)`, `k` in `1..q`.
    pub fn pi_level(&self, k: usize) -> &SparseMatrix {
        &self.pi[k - 1]
    }

    /// `W^(k)`, `k` in `2..=q`.
    pub fn w_level(&self, k: usize) -> &SparseMatrix {
        &self.w[k - 2]
    }

    pub fn orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn cellular(&self) -> bool {
        self.cellular
    }

    /// Parent cell (level k-1 label) of each wavelet row at level k, when the
    /// wavelets are cellular.
    pub fn wavelet_parents(&self, k: usize) -> Option<&[usize]> {
        self.j_parent.as_ref().map(|jp| jp[k - 2].as_slice())
    }

    /// Chained product `π^(k,q) = π^(k,k+1) ⋯ π^(q-1,q)`; identity at `k = q`.
    pub fn pi_chain(&self, k: usize) -> SparseMatrix {
        let q = self.depth();
        if k == q {
            return SparseMatrix::identity(self.n_dofs());
        }
        let mut prod = self.pi[k - 1].clone();
        for level in k + 1..q {
            prod = prod.matmul(&self.pi[level - 1]);
        }
        prod
    }

    /// Derives the wavelet parent table from the W patterns and a tree;
    /// errors when some row straddles two cells (non-cellular W).
    pub fn derive_wavelet_parents(&mut self, tree: &IndexTree) -> Result<()> {
        if self.j_parent.is_some() {
            return Ok(());
        }
        let q = self.depth();
        let mut tables = Vec::with_capacity(q.saturating_sub(1));
        for k in 2..=q {
            let wk = &self.w[k - 2];
            let mut parents = Vec::with_capacity(wk.nrows());
            for j in 0..wk.nrows() {
                let (cols, _) = wk.row(j);
                if cols.is_empty() {
                    return Err(Error::Structure(format!(
                        "wavelet row {j} at level {k} is empty"
                    )));
                }
                let anc = |c: usize| {
                    if k == q {
                        tree.ancestor_of_dof(c, k - 1)
                    } else {
                        tree.parent_of(k, c)
                    }
                };
                let p = anc(cols[0]);
                if cols.iter().any(|&c| anc(c) != p) {
                    return Err(Error::Structure(format!(
                        "wavelet row {j} at level {k} spans several cells; cellular W required"
                    )));
                }
                parents.push(p);
            }
            tables.push(parents);
        }
        self.j_parent = Some(tables);
        Ok(())
    }

    /// Writes π/W as Matrix Market files plus a JSON sidecar.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let q = self.depth();
        for k in 1..q {
            crate::sparse::mm::write_matrix(dir.join(format!("pi_{k}.mtx")), &self.pi[k - 1])?;
        }
        for k in 2..=q {
            crate::sparse::mm::write_matrix(dir.join(format!("w_{k}.mtx")), &self.w[k - 2])?;
        }
        let sidecar = OperatorSidecar {
            depth: q,
            level_sizes: self.level_sizes.clone(),
            wavelet_sizes: (2..=q).map(|k| self.wavelet_size(k)).collect(),
            orthonormal: self.orthonormal,
            cellular: self.cellular,
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(dir.join("ops.json"), json)?;
        Ok(())
    }

    /// Loads operators saved by [`HierarchyOperators::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let sidecar: OperatorSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join("ops.json"))?)?;
        let q = sidecar.depth;
        let mut pi = Vec::new();
        for k in 1..q {
            pi.push(crate::sparse::mm::read_matrix(
                dir.join(format!("pi_{k}.mtx")),
            )?);
        }
        let mut w = Vec::new();
        for k in 2..=q {
            w.push(crate::sparse::mm::read_matrix(
                dir.join(format!("w_{k}.mtx")),
            )?);
        }
        HierarchyOperators::new(
            sidecar.level_sizes,
            pi,
            w,
            None,
            sidecar.orthonormal,
            sidecar.cellular,
        )
    }
}

/// Orthonormal cellular nesting matrices: each row of `π^(k,k+1)` carries
/// `1/√m` on the `m` children of its cell, so `π πᵀ = I` by construction.
pub fn build_haar_pi(tree: &IndexTree) -> Vec<SparseMatrix> {
    let q = tree.depth();
    let mut out = Vec::with_capacity(q.saturating_sub(1));
    for k in 1..q {
        let nk = tree.level_size(k);
        let mut triplets = Vec::new();
        for i in 0..nk {
            let children = tree.children(k, i);
            let v = 1.0 / (children.len() as f64).sqrt();
            for c in children {
                let col = if k + 1 == q { tree.leaf_to_dof(c) } else { c };
                triplets.push((i, col, v));
            }
        }
        out.push(SparseMatrix::from_triplets(
            nk,
            tree.level_size(k + 1),
            triplets,
        ));
    }
    out
}

/// Cellular wavelet matrices complementing `π`: per cell of `m` children the
/// block is the last `m-1` rows of the Householder reflector taking `e₁` to
/// the cell's normalized nesting row, hence orthonormal, orthogonal to the π
/// row, and deterministic. Cells with a single child get an empty block.
///
/// Returns the `W^(k)` matrices together with the row → parent-cell table.
pub fn build_cellular_w(
    tree: &IndexTree,
    pi: &[SparseMatrix],
) -> Result<(Vec<SparseMatrix>, Vec<Vec<usize>>)> {
    let q = tree.depth();
    if pi.len() + 1 != q {
        return Err(Error::Structure(format!(
            "expected {} nesting matrices for depth {q}, got {}",
            q - 1,
            pi.len()
        )));
    }
    let mut w_out = Vec::with_capacity(q.saturating_sub(1));
    let mut parents_out = Vec::with_capacity(q.saturating_sub(1));
    for k in 2..=q {
        let pik = &pi[k - 2]; // π^(k-1,k)
        let n_cells = tree.level_size(k - 1);
        let mut triplets = Vec::new();
        let mut parents = Vec::new();
        let mut row = 0usize;
        for i in 0..n_cells {
            let children: Vec<usize> = tree
                .children(k - 1, i)
                .map(|c| if k == q { tree.leaf_to_dof(c) } else { c })
                .collect();
            let m = children.len();
            let (pcols, pvals) = pik.row(i);
            // cellularity of π: row support must be exactly this cell
            let mut expected = children.clone();
            expected.sort_unstable();
            if pcols != expected.as_slice() {
                return Err(Error::Structure(format!(
                    "π row {i} at level {} is not supported on its cell",
                    k - 1
                )));
            }
            if m == 1 {
                continue; // no wavelet row for a single-child cell
            }
            // normalized cell vector in the sorted-column order of the π row
            let nrm = pvals.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::Structure(format!(
                    "π row {i} at level {} is zero on its cell",
                    k - 1
                )));
            }
            let c: Vec<f64> = pvals.iter().map(|v| v / nrm).collect();
            // Householder reflector H = I - 2 v vᵀ / |v|² with H e₁ = c
            let mut v = c.clone();
            v[0] -= 1.0;
            let v2: f64 = v.iter().map(|x| x * x).sum();
            for r in 1..m {
                for t in 0..m {
                    let mut h = if r == t { 1.0 } else { 0.0 };
                    if v2 > 1e-300 {
                        h -= 2.0 * v[r] * v[t] / v2;
                    }
                    if h != 0.0 {
                        triplets.push((row, pcols[t], h));
                    }
                }
                parents.push(i);
                row += 1;
            }
        }
        let nj = tree.level_size(k) - tree.level_size(k - 1);
        if row != nj {
            return Err(Error::Structure(format!(
                "wavelet row count {row} at level {k} does not match |I^({k})| - |I^({})| = {nj}",
                k - 1
            )));
        }
        w_out.push(SparseMatrix::from_triplets(
            nj,
            tree.level_size(k),
            triplets,
        ));
        parents_out.push(parents);
    }
    Ok((w_out, parents_out))
}

/// Pseudo-inverse `π̄ = (π πᵀ)⁻¹ π`. For orthonormal `π` (gram within 1e-12 of
/// the identity) this returns `π` itself, exactly.
pub fn pseudo_inverse_pi(pi: &SparseMatrix) -> Result<SparseMatrix> {
    let gram = pi.matmul(&pi.transpose());
    let dev = gram
        .add_scaled(1.0, &SparseMatrix::identity(gram.nrows()), -1.0)
        .max_abs();
    if dev <= 1e-12 {
        return Ok(pi.clone());
    }
    let n = gram.nrows();
    let chol = gram.to_dense().cholesky().map_err(|e| match e {
        Error::NotSpd { pivot, .. } => Error::RankDeficient(format!(
            "π πᵀ is singular (factorization failed at pivot {pivot}); π lacks full row rank"
        )),
        other => other,
    })?;
    // row i of π̄ is (G⁻¹ e_i)ᵀ π
    let mut triplets = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let y = chol.solve_vec(&e);
        let row = pi.mul_vec_transposed(&y);
        for (j, v) in row.into_iter().enumerate() {
            if v != 0.0 {
                triplets.push((i, j, v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, pi.ncols(), triplets))
}

/// Deviations of the construction identities, per level, plus the number of
/// entries violating cellularity.
#[derive(Debug, Clone, Serialize)]
pub struct ConstructionReport {
    /// max |π πᵀ − I| for k = 1..q-1
    pub pi_gram_dev: Vec<f64>,
    /// max |W Wᵀ − J| for k = 2..q
    pub w_gram_dev: Vec<f64>,
    /// max |W πᵀ| for k = 2..q
    pub w_pi_dev: Vec<f64>,
    /// entries of π or W outside their cell blocks
    pub cellularity_violations: usize,
}

impl ConstructionReport {
    pub fn max_deviation(&self) -> f64 {
        self.pi_gram_dev
            .iter()
            .chain(&self.w_gram_dev)
            .chain(&self.w_pi_dev)
            .fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Measures how far the operators are from the identities they are supposed
/// to satisfy. Diagnostic only: never fails, reports deviations.
pub fn verify_constructions(tree: &IndexTree, ops: &HierarchyOperators) -> ConstructionReport {
    let q = ops.depth();
    let mut pi_gram_dev = Vec::new();
    let mut w_gram_dev = Vec::new();
    let mut w_pi_dev = Vec::new();
    let mut violations = 0usize;
    for k in 1..q {
        let pi = ops.pi_level(k);
        let gram = pi.matmul(&pi.transpose());
        pi_gram_dev.push(
            gram.add_scaled(1.0, &SparseMatrix::identity(gram.nrows()), -1.0)
                .max_abs(),
        );
        // cellularity: π^(k,k+1) entry (i, j) requires parent(j) == i
        for i in 0..pi.nrows() {
            let (cols, _) = pi.row(i);
            for &j in cols {
                let p = if k + 1 == q {
                    tree.ancestor_of_dof(j, k)
                } else {
                    tree.parent_of(k + 1, j)
                };
                if p != i {
                    violations += 1;
                }
            }
        }
    }
    for k in 2..=q {
        let w = ops.w_level(k);
        let gram = w.matmul(&w.transpose());
        w_gram_dev.push(
            gram.add_scaled(1.0, &SparseMatrix::identity(gram.nrows()), -1.0)
                .max_abs(),
        );
        let pi = ops.pi_level(k - 1);
        w_pi_dev.push(w.matmul(&pi.transpose()).max_abs());
        // cellularity of W: all columns of a row share one level-(k-1) cell
        for j in 0..w.nrows() {
            let (cols, _) = w.row(j);
            if cols.is_empty() {
                continue;
            }
            let anc = |c: usize| {
                if k == q {
                    tree.ancestor_of_dof(c, k - 1)
                } else {
                    tree.parent_of(k, c)
                }
            };
            let p = anc(cols[0]);
            violations += cols.iter().filter(|&&c| anc(c) != p).count();
        }
    }
    ConstructionReport {
        pi_gram_dev,
        w_gram_dev,
        w_pi_dev,
        cellularity_violations: violations,
    }
}

/// Dense pseudo-inverse oracle `πᵀ(π πᵀ)⁻¹` transposed, for tests.
pub fn dense_pseudo_inverse(pi: &DenseMatrix) -> Result<DenseMatrix> {
    let gram = pi.matmul(&pi.transpose());
    let inv = gram
        .inverse()
        .map_err(|_| Error::RankDeficient("dense pseudo-inverse: π πᵀ not invertible".into()))?;
    Ok(inv.matmul(pi))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // index loops mirror matrix coordinates
mod tests {
    use super::*;

    #[test]
    fn grid_tree_sizes_and_parents_1d() {
        let tree = IndexTree::grid(1, 2, 2).unwrap();
        assert_eq!(tree.level_sizes(), &[2, 4]);
        assert_eq!(tree.parent_of(2, 3), 1);
        assert_eq!(tree.children(1, 0), 0..2);
    }

    #[test]
    fn grid_tree_sizes_2d() {
        let tree = IndexTree::grid(2, 3, 2).unwrap();
        assert_eq!(tree.level_sizes(), &[4, 16, 64]);
    }

    #[test]
    fn grid_tree_rejects_oversize() {
        assert!(matches!(IndexTree::grid(3, 12, 4), Err(Error::Capacity(_))));
    }

    #[test]
    fn nested_cells_contained_in_parent_boxes() {
        let tree = IndexTree::grid(2, 3, 2).unwrap();
        for label in 0..tree.level_size(3) {
            let (lo, hi) = tree.cell_box(3, label).unwrap();
            let parent = tree.parent_of(3, label);
            let (plo, phi) = tree.cell_box(2, parent).unwrap();
            for a in 0..2 {
                assert!(plo[a] <= lo[a] + 1e-15 && hi[a] <= phi[a] + 1e-15);
            }
        }
    }

    #[test]
    fn leaf_dof_is_row_major_bijection() {
        let tree = IndexTree::grid(2, 2, 2).unwrap();
        let mut seen = [false; 16];
        for p in 0..16 {
            let d = tree.leaf_to_dof(p);
            assert!(!seen[d]);
            seen[d] = true;
            assert_eq!(tree.dof_to_leaf(d), p);
        }
        // leaves of one level-1 quadrant occupy one 2x2 spatial block
        let quad: Vec<usize> = (0..4).map(|p| tree.leaf_to_dof(p)).collect();
        let mut sorted = quad.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 4, 5]); // rows 0-1, cols 0-1 of a 4x4 grid
    }

    #[test]
    fn haar_pi_rows_binary_and_quad() {
        let tree1 = IndexTree::grid(1, 2, 2).unwrap();
        let pi = build_haar_pi(&tree1);
        let (cols, vals) = pi[0].row(0);
        assert_eq!(cols, &[0, 1]);
        let r = 0.5f64.sqrt();
        assert!((vals[0] - r).abs() < 1e-15 && (vals[1] - r).abs() < 1e-15);

        let tree2 = IndexTree::grid(2, 2, 2).unwrap();
        let pi2 = build_haar_pi(&tree2);
        let (_, vals2) = pi2[0].row(0);
        assert_eq!(vals2.len(), 4);
        for v in vals2 {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn haar_pi_gram_is_identity() {
        let tree = IndexTree::grid(2, 4, 2).unwrap();
        let ops = HierarchyOperators::standard(&tree).unwrap();
        for k in 1..4 {
            let pi = ops.pi_level(k);
            let dev = pi
                .matmul(&pi.transpose())
                .add_scaled(1.0, &SparseMatrix::identity(pi.nrows()), -1.0)
                .max_abs();
            assert!(dev <= 1e-14, "level {k}: {dev}");
        }
    }

    #[test]
    fn binary_cell_wavelet_row() {
        let tree = IndexTree::grid(1, 2, 2).unwrap();
        let pi = build_haar_pi(&tree);
        let (w, parents) = build_cellular_w(&tree, &pi).unwrap();
        let (cols, vals) = w[0].row(0);
        assert_eq!(cols, &[0, 1]);
        let r = 0.5f64.sqrt();
        assert!((vals[0] - r).abs() < 1e-15 && (vals[1] + r).abs() < 1e-15);
        assert_eq!(parents[0], vec![0, 1]);
    }

    #[test]
    fn quad_cell_wavelet_block() {
        let tree = IndexTree::grid(2, 2, 2).unwrap();
        let pi = build_haar_pi(&tree);
        let (w, _) = build_cellular_w(&tree, &pi).unwrap();
        let w2 = &w[0];
        assert_eq!(w2.nrows(), 12);
        // rows 0..3 belong to cell 0; orthonormal and ⊥ (1/2,1/2,1/2,1/2)
        let cell_cols: Vec<usize> = {
            let (c, _) = w2.row(0);
            c.to_vec()
        };
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|r| {
                let (cols, vals) = w2.row(r);
                assert_eq!(cols, cell_cols.as_slice());
                vals.to_vec()
            })
            .collect();
        for a in 0..3 {
            let against_pi: f64 = rows[a].iter().map(|v| v * 0.5).sum();
            assert!(against_pi.abs() < 1e-14);
            for b in 0..3 {
                let d: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-14);
            }
        }
        // independent Gram-Schmidt complement spans the same space:
        // projector onto span(rows) must equal I - c cᵀ on the cell
        let mut proj = [[0.0f64; 4]; 4];
        for row in &rows {
            for i in 0..4 {
                for j in 0..4 {
                    proj[i][j] += row[i] * row[j];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 - 0.25 } else { -0.25 };
                assert!((proj[i][j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn w_annihilates_pi() {
        let tree = IndexTree::grid(2, 4, 2).unwrap();
        let ops = HierarchyOperators::standard(&tree).unwrap();
        for k in 2..=4 {
            let dev = ops
                .w_level(k)
                .matmul(&ops.pi_level(k - 1).transpose())
                .max_abs();
            assert!(dev <= 1e-14, "level {k}: {dev}");
        }
    }

    #[test]
    fn pseudo_inverse_orthonormal_is_identity_map() {
        let tree = IndexTree::grid(1, 3, 2).unwrap();
        let ops = HierarchyOperators::standard(&tree).unwrap();
        let pi = ops.pi_level(1);
        let bar = pseudo_inverse_pi(pi).unwrap();
        assert_eq!(&bar, pi); // exact equality for orthonormal π
    }

    #[test]
    fn pseudo_inverse_scaled_rows() {
        let pi = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (1, 1, 1.0)]);
        let bar = pseudo_inverse_pi(&pi).unwrap();
        assert!((bar.get(0, 0) - 0.5).abs() < 1e-14);
        assert!((bar.get(1, 1) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_random_full_rank_vs_dense_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(23);
        let mut d = DenseMatrix::zeros(4, 8);
        for i in 0..4 {
            for j in 0..8 {
                d[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let pi = SparseMatrix::from_dense(&d);
        let bar = pseudo_inverse_pi(&pi).unwrap();
        let oracle = dense_pseudo_inverse(&d).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert!((bar.get(i, j) - oracle[(i, j)]).abs() <= 1e-12);
            }
        }
        // π̄ πᵀ = I
        let dev = bar
            .matmul(&pi.transpose())
            .add_scaled(1.0, &SparseMatrix::identity(4), -1.0)
            .max_abs();
        assert!(dev <= 1e-13);
    }

    #[test]
    fn pseudo_inverse_rank_deficient_errors() {
        let pi = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 0, 1.0)]);
        assert!(matches!(
            pseudo_inverse_pi(&pi),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn verify_clean_construction() {
        let tree = IndexTree::grid(2, 3, 2).unwrap();
        let ops = HierarchyOperators::standard(&tree).unwrap();
        let report = verify_constructions(&tree, &ops);
        assert!(report.max_deviation() <= 1e-13);
        assert_eq!(report.cellularity_violations, 0);
    }

    #[test]
    fn verify_flags_scaled_pi_row() {
        let tree = IndexTree::grid(1, 3, 2).unwrap();
        let mut pi = build_haar_pi(&tree);
        // scale one row of π^(1,2)
        pi[0] = pi[0].filter(|_, _| true).add_scaled(1.0, &pi[0], 0.0);
        let scaled = {
            let mut t = Vec::new();
            for i in 0..pi[0].nrows() {
                let (cols, vals) = pi[0].row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    t.push((i, j, if i == 1 { 2.0 * v } else { v }));
                }
            }
            SparseMatrix::from_triplets(pi[0].nrows(), pi[0].ncols(), t)
        };
        let (w, jp) = build_cellular_w(&tree, &pi).unwrap();
        let mut pi_scaled = pi.clone();
        pi_scaled[0] = scaled;
        let ops = HierarchyOperators::new(
            tree.level_sizes().to_vec(),
            pi_scaled,
            w,
            Some(jp),
            false,
            true,
        )
        .unwrap();
        let report = verify_constructions(&tree, &ops);
        assert!(report.pi_gram_dev[0] > 1.0); // (2·1)² − 1 = 3 on that diagonal
        assert_eq!(report.cellularity_violations, 0);
    }

    #[test]
    fn verify_counts_cellularity_violations_for_dense_w() {
        let tree = IndexTree::grid(1, 2, 2).unwrap();
        let pi = build_haar_pi(&tree);
        // replace W^(2) with a dense (non-cellular) full-rank complement
        let r = 0.5f64;
        let w_dense = SparseMatrix::from_triplets(
            2,
            4,
            vec![
                (0, 0, r),
                (0, 1, -r),
                (0, 2, r),
                (0, 3, -r),
                (1, 0, r),
                (1, 1, -r),
                (1, 2, -r),
                (1, 3, r),
            ],
        );
        let ops = HierarchyOperators::new(
            tree.level_sizes().to_vec(),
            pi,
            vec![w_dense],
            None,
            false,
            false,
        )
        .unwrap();
        let report = verify_constructions(&tree, &ops);
        assert!(report.cellularity_violations > 0);
    }

    #[test]
    fn tuple_decoder_matches_prefix_structure() {
        let tree = IndexTree::grid(1, 3, 2).unwrap();
        for leaf in 0..8 {
            let t = tree.tuple_of(3, leaf);
            assert_eq!(t.len(), 3);
            // the k-prefix decodes the level-k ancestor
            let parent_tuple = tree.tuple_of(2, tree.parent_of(3, leaf));
            assert_eq!(&t[..2], parent_tuple.as_slice());
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let tree = IndexTree::grid(2, 3, 2).unwrap();
        let ops = HierarchyOperators::standard(&tree).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ops.save(dir.path()).unwrap();
        let mut back = HierarchyOperators::load(dir.path()).unwrap();
        assert_eq!(back.depth(), 3);
        assert_eq!(back.level_sizes(), ops.level_sizes());
        for k in 1..3 {
            assert_eq!(back.pi_level(k), ops.pi_level(k));
        }
        for k in 2..=3 {
            assert_eq!(back.w_level(k), ops.w_level(k));
        }
        back.derive_wavelet_parents(&tree).unwrap();
        assert_eq!(
            back.wavelet_parents(2).unwrap(),
            ops.wavelet_parents(2).unwrap()
        );
    }
}
