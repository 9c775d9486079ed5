//! Multiresolution operator-adapted decomposition of symmetric positive
//! definite linear systems.
//!
//! Given an SPD matrix `A` and a hierarchy of nesting (`π`) and wavelet (`W`)
//! matrices over an index tree, the transform in [`transform`] produces a
//! change of basis that splits `R^N` into A-orthogonal subbands, each carrying
//! an independent, uniformly well-conditioned system. [`fast`] adds the
//! localized variant whose per-level operators are truncated to graph-distance
//! balls, bringing the first solve to near-linear complexity. [`problems`]
//! generates the test systems (2D bilinear FEM with a rough multiscale
//! coefficient, regularized graph Laplacians) and [`diagnostics`] measures the
//! quantities the method guarantees: subband condition numbers, error decay
//! per level, basis decay profiles, and posterior error covariances.

pub mod cli;
pub mod diagnostics;
mod error;
pub mod fast;
pub mod hierarchy;
pub mod problems;
pub mod sparse;
pub mod transform;

pub use error::{Error, Result};
pub use hierarchy::{HierarchyOperators, IndexTree};
pub use sparse::{DenseMatrix, SparseMatrix};
pub use transform::{GambletHierarchy, SubbandSolution};
